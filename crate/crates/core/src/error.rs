use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are inconsistent.
    #[error("dimension mismatch: {0}")]
    Dim(String),
    /// An argument violates a precondition.
    #[error("invalid argument: {0}")]
    Arg(String),
    /// A numeric procedure broke down (non-finite data, failed factorization).
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A metric is undefined for the given inputs (e.g. an empty class).
    #[error("metric undefined: {0}")]
    Metric(String),
    /// An input file does not match the expected format.
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Arg(msg.into())
    }
    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
