use thiserror::Error;

/// Errors raised by the detection toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid epoch sequence: {0}")]
    Epoch(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("unknown unit `{0}`")]
    UnknownUnit(String),
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("model fit failed: {0}")]
    Fit(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
