use thiserror::Error;

/// Errors produced by the solvers, analysis routines and CLI front end.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A drift, diffusion or state value was NaN or infinite. `step` is the
    /// index of the offending step when raised from a trajectory integration.
    #[error("non-finite {what}{}", step.map(|k| format!(" at step {k}")).unwrap_or_default())]
    NonFinite { what: String, step: Option<usize> },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("no sign change on bracket [{lo}, {hi}]")]
    RootNotFound { lo: f64, hi: f64 },

    #[error("iteration did not converge within {0} steps")]
    NoConvergence(usize),

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
