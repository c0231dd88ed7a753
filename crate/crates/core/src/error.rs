use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A point or ball lies outside the fundamental domain of its leaf or chart.
    #[error("domain error: {0}")]
    Domain(String),
    /// An argument violates a precondition (non-monotone ladder, bad radius, ...).
    #[error("invalid argument: {0}")]
    Argument(String),
    /// A measure oracle could not evaluate a ball.
    #[error("measure oracle failure: {0}")]
    Oracle(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn argument<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
