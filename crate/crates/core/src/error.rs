use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("action index {index} out of range for {len} actions")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("kernel length scale must be positive, got {0}")]
    NonPositiveLengthScale(f64),

    #[error("cholesky factorization failed after {escalations} jitter escalations (last jitter {jitter:e})")]
    Factorization { escalations: usize, jitter: f64 },

    #[error("C({n}, {k}) = {count} super-arms exceeds the cap of {cap}")]
    SuperArmCap { n: usize, k: usize, count: u128, cap: usize },

    #[error("{rounds} rounds cannot complete CUCB initialization, which needs {needed}")]
    InsufficientRounds { rounds: usize, needed: usize },

    #[error("subset must not be empty")]
    EmptySubset,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
