use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated an operation's precondition (shapes, empty domains, bad parameters).
    #[error("usage error: {0}")]
    Usage(String),

    /// A functional's domain guard failed.
    #[error("domain error: {0}")]
    Domain(String),

    /// The linear or nonlinear solver could not produce an acceptable answer.
    #[error("solver error: {0}")]
    Solver(String),

    /// An iterative solver hit its cap; the best iterate is attached.
    #[error("solver did not converge: {message}")]
    NotConverged { message: String, best: Box<crate::fields::ScalarField> },

    /// Ellipticity was required but not present.
    #[error("ellipticity failure: {0}")]
    Ellipticity(String),

    /// Configuration could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
