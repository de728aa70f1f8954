use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the grading pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent shapes, hyperparameters, rubrics or checkpoints.
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller passed an out-of-range or malformed value.
    #[error("input error: {0}")]
    Input(String),
    /// A value became non-finite during a forward or backward pass.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// An operation was invoked in a state that does not allow it.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Csv(_) => 3,
            _ => 2,
        }
    }
}
