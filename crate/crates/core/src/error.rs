use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("duplicate {sensor} reading at {timestamp}")]
    DuplicateTimestamp { sensor: String, timestamp: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("gap at index {index} inside a filtered segment; impute first or filter per contiguous segment")]
    GapInSegment { index: usize },

    #[error("gap of {len} samples starting at index {start} exceeds the {cap}-sample cap; split the series")]
    GapTooLong { start: usize, len: usize, cap: usize },

    #[error("channel {channel} has zero standard deviation")]
    ZeroStd { channel: String },

    #[error("series too short: need at least {required} samples, have {actual}")]
    InsufficientLength { required: usize, actual: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("only {succeeded} of {requested} ensemble members trained; need {required}")]
    TooFewMembers {
        requested: usize,
        succeeded: usize,
        required: usize,
    },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error("missing artifact {}: run {stage} first", path.display())]
    MissingArtifact { stage: String, path: PathBuf },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable identifier used in machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::DuplicateTimestamp { .. } => "duplicate_timestamp",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::GapInSegment { .. } => "gap_in_segment",
            Error::GapTooLong { .. } => "gap_too_long",
            Error::ZeroStd { .. } => "zero_std",
            Error::InsufficientLength { .. } => "insufficient_length",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::Diverged { .. } => "diverged",
            Error::TooFewMembers { .. } => "too_few_members",
            Error::Config { .. } => "config",
            Error::Snapshot(_) => "snapshot",
            Error::MissingArtifact { .. } => "missing_artifact",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
