use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid dimensions must be positive, got {0:?}")]
    EmptyDimension([usize; 3]),

    #[error("data length {actual} does not match dimensions {dims:?} ({expected} voxels)")]
    LengthMismatch {
        dims: [usize; 3],
        expected: usize,
        actual: usize,
    },

    #[error("voxel spacing must be strictly positive and finite, got {0:?}")]
    InvalidSpacing([f64; 3]),

    #[error("mask is not binary: voxel {index} has value {value}")]
    NotBinary { index: usize, value: u8 },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: [usize; 3], right: [usize; 3] },

    #[error("unsupported connectivity {0} (expected 6, 18 or 26)")]
    InvalidConnectivity(u32),

    #[error("band thresholds must be strictly increasing and positive: {0}")]
    InvalidBands(String),

    #[error("probability volume needs at least 2 channels, got {0}")]
    TooFewChannels(usize),

    #[error("probability {value} at voxel {index}, channel {channel} is outside [0, 1]")]
    ProbabilityOutOfRange {
        index: usize,
        channel: usize,
        value: f64,
    },

    #[error("class probabilities at voxel {index} sum to {sum}, outside tolerance {tolerance} of 1")]
    NotNormalized {
        index: usize,
        sum: f64,
        tolerance: f64,
    },

    #[error("{name} = {value} is outside [0, 1]")]
    OutOfUnitRange { name: &'static str, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty case set")]
    EmptyCaseSet,

    #[error("duplicate case id {0:?}")]
    DuplicateCase(String),

    #[error("cannot split {cases} cases into {folds} folds")]
    InvalidFoldCount { cases: usize, folds: usize },

    #[error("could not place lesion {lesion} (target {target} voxels) after {attempts} attempts")]
    InfeasiblePacking {
        lesion: usize,
        target: usize,
        attempts: usize,
    },

    #[error("not a NIfTI-1 file: {0}")]
    BadMagic(String),

    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("truncated header: {actual} bytes, need 348")]
    TruncatedHeader { actual: usize },

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },

    #[error("volume has {actual} dimensions, expected {expected}")]
    WrongRank { expected: &'static str, actual: usize },

    #[error("{}: {err}", path.display())]
    Io { path: PathBuf, err: std::io::Error },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            err: source,
        }
    }
}
