use thiserror::Error;

use crate::replica::RsState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the region where an operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A decoupling step failed; the state that triggered it is attached.
    #[error("replica fixed point left its domain at q={:?}, chi={:?}: {source}", state.q, state.chi)]
    FixedPoint {
        state: RsState,
        #[source]
        source: Box<Error>,
    },

    #[error("solver diverged after {iterations} iterations (objective trace length {})", trace.len())]
    Diverged { iterations: usize, trace: Vec<f64> },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("all inner solves failed: {0}")]
    AllFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
