use thiserror::Error;

/// Crate-wide error type.
///
/// The CLI maps variants onto exit codes: `Config` -> 2, `Data`/`Format` -> 3,
/// everything else -> 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("sampler failed at iteration {iteration}: {message}")]
    Sampler { iteration: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
