use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shape or dimension mismatch; the message names the offending dimension.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid argument or configuration value.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// A numeric contract was violated (non-finite value, probability out of range, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Weight-file or other serialized-format problem.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
