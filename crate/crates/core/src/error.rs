use std::path::PathBuf;

/// Errors produced by the benchmarking engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),
    #[error("invalid resolution {0}: must divide 180 and 360 evenly")]
    InvalidResolution(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("region selects no grid cells: {0}")]
    EmptyRegion(String),

    #[error("bad magic bytes in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: [u8; 4] },
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("header parse error: {0}")]
    HeaderParse(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("degenerate channel {0:?}: zero variance over the training split")]
    DegenerateChannel(String),
    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid sampling configuration: {0}")]
    InvalidSampling(String),
    #[error("no samples could be constructed: {0}")]
    EmptySampleSet(String),
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("singular normal matrix: {0}")]
    Singular(String),
    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("mask selects no pixel: {0}")]
    EmptyMask(String),
    #[error("prediction set is not aligned with truth: {0}")]
    Misaligned(String),
    #[error("rollout-incompatible step model: {0}")]
    RolloutIncompatible(String),

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
