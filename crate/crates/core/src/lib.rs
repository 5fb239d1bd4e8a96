//! Label-space tooling for small-lesion segmentation of 3D volumes.
//!
//! The crate covers everything around a segmentation network:
//!
//! - [`volume`]: dense voxel grids, connected components and an exact
//!   Euclidean distance transform.
//! - [`labeling`]: size-band (MSL) and distance-band (DBL) relabeling of
//!   binary lesion masks, and the way back from class probabilities to a
//!   binary mask.
//! - [`ensemble`]: size-gated fusion of MSL and DBL foreground maps,
//!   low-confidence component removal, and hyper-parameter sweeps.
//! - [`metrics`]: voxel-wise Dice and lesion-wise detection scores.
//! - [`dataprep`]: size-balanced k-fold splits, patch sampling and synthetic
//!   cases.
//! - [`io`]: single-file NIfTI-1 volumes and CSV reports.
//!
//! Probability computations are generic over the floating point type through
//! [`Real`]; the aliases below fix the common choices.

pub mod dataprep;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod labeling;
pub mod metrics;
pub mod volume;

pub use error::{Error, Result};
pub use labeling::{CategoryMask, DistanceBands, ProbVolume, SizeBands};
pub use volume::{BoundingBox, Connectivity, DistanceUnits, LesionComponent, VoxelGrid};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};

/// Floating point scalar used for probabilities and distances.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`.
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts to any Real")
    }

    /// Conversion to `f64`.
    fn to_f64_lossless(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Binary lesion mask, values in {0, 1}.
pub type Mask = VoxelGrid<u8>;

/// Euclidean distance to background, in voxels or millimetres.
pub type DistanceField = VoxelGrid<f64>;

/// Per-voxel foreground probability `p_k`.
pub type ForegroundProb<F> = VoxelGrid<F>;

/// Single-precision foreground map, the on-disk representation.
pub type ForegroundProb32 = VoxelGrid<f32>;

/// Double-precision foreground map.
pub type ForegroundProb64 = VoxelGrid<f64>;

/// Single-precision class probability volume.
pub type ProbVolume32 = ProbVolume<f32>;

/// Double-precision class probability volume.
pub type ProbVolume64 = ProbVolume<f64>;
