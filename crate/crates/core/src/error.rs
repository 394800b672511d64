use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },

    /// Quadrature exhausted its subdivision budget. The best value and its
    /// error estimate are carried along for callers that can tolerate them.
    #[error(
        "quadrature did not converge after {subdivisions} subdivisions \
         (value {value}, error estimate {err_est:e})"
    )]
    ConvergenceFailure {
        value: f64,
        err_est: f64,
        subdivisions: usize,
    },

    #[error("failed to bracket the stationary point: {0}")]
    RootBracketFailure(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization failed: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
