use thiserror::Error;

/// Errors produced by the SLAM toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}D, got {found}D")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index out of range: {what} {index} (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("normal equations are not positive definite at {0}; the variable is likely disconnected")]
    RankDeficient(String),

    #[error("landmark {0} has no measurements")]
    UnobservedLandmark(usize),

    #[error("odometry chain is broken between poses {0} and {1}")]
    BrokenChain(usize, usize),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
