//! Error types shared across the crate.

use thiserror::Error;

/// Unified error type for all fallible operations in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension mismatch in a linear-algebra or propagation step.
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    /// Row-wise dual norms are only implemented for q = 1 (the ℓ∞ dual).
    #[error("only q=1 supported")]
    UnsupportedNorm,

    /// A vector expected to be one-hot was not.
    #[error("label vector is not one-hot: {0}")]
    NotOneHot(String),

    /// Class index outside the output dimension.
    #[error("class index {index} out of range for {dim} outputs")]
    IndexOutOfRange { index: usize, dim: usize },

    /// Interval with lower > upper, or a negative half-gap.
    #[error("invalid interval at {context}: lower {lower} > upper {upper}")]
    InvalidInterval {
        context: &'static str,
        lower: f64,
        upper: f64,
    },

    /// Bad architecture description (non-chaining dims, empty net, ...).
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    /// Bad run/training configuration.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A non-finite value appeared where the numeric contract forbids it.
    #[error("numeric failure in {context}: non-finite value at layer {layer}")]
    NumericFailure { context: &'static str, layer: usize },

    /// Checkpoint file declares an unsupported format version.
    #[error("checkpoint version mismatch: expected {expected}, file has {got}")]
    VersionMismatch { expected: u32, got: i64 },

    /// Checkpoint contents disagree with their declared shapes.
    #[error("checkpoint shape inconsistency: {0}")]
    CheckpointShape(String),

    /// IDX/CIFAR file has the wrong magic number.
    #[error("bad magic in {path}: expected {expected:#010x}, got {got:#010x}")]
    BadMagic {
        path: String,
        expected: u32,
        got: u32,
    },

    /// Data file ends before its declared payload.
    #[error("truncated file {path}: needed {needed} bytes, had {had}")]
    Truncated {
        path: String,
        needed: usize,
        had: usize,
    },

    /// Image and label files disagree on example count.
    #[error("count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    /// A pixel outside [0,1] is a hard error, never clamped.
    #[error("pixel out of range at example {example}, offset {offset}: {value}")]
    PixelRange {
        example: usize,
        offset: usize,
        value: f64,
    },

    /// Requested validation split does not fit in the dataset.
    #[error("validation size {requested} too large for dataset of {available}")]
    ValSplitTooLarge { requested: usize, available: usize },

    /// Brute-force range oracle refuses high-dimensional grids.
    #[error("input dim {dim} too large for grid oracle (max {max})")]
    DimensionTooLarge { dim: usize, max: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Process exit code for the CLI: 2 for user/config errors, 3 for
    /// numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericFailure { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
