//! Fold splitting, patch sampling and synthetic data.

mod patch;
mod split;
mod synth;

pub use patch::{centered_corner, extract_patch, sample_patch_pair, Patch, PatchPair, PatchSpec};
pub use split::{random_split, size_balanced_split, CaseRecord, FoldAssignment};
pub use synth::{synth_generate, LesionBand, NoiseSpec, PlantedLesion, SynthCase, SynthSpec};
