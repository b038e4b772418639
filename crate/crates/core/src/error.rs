//! Crate-wide error type.

/// Everything that can go wrong in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad argument, malformed configuration, or data that fails a precondition.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// Dimensions that cannot be combined.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// The optimizer produced a non-finite objective (learning rate too large,
    /// or degenerate data). Carries the objective trace up to the failure.
    #[error("objective became non-finite at iteration {iteration}")]
    Diverged { iteration: usize, trace: Vec<f64> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// Malformed file contents.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
