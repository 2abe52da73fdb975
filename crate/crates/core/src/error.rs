use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller handed in data with the wrong shape or an out-of-range value.
    #[error("invalid input: {0}")]
    Input(String),

    /// A configuration is self-inconsistent or names an unsupported combination.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A statistic is undefined for the supplied data (e.g. zero variance).
    #[error("undefined result: {0}")]
    Undefined(String),

    /// An internal invariant was violated.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
