use thiserror::Error;

/// Errors raised by constructions and checks.
///
/// Sampled checks never error on failure; they return reports. Errors are
/// reserved for malformed input and violated preconditions.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("unsupported mode: {0}")]
    Unsupported(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("diagnostic: {0}")]
    Diagnostic(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
