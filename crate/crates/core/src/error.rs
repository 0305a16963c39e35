use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("index {index} out of range 1..={dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("bad file header: {0}")]
    Header(String),

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("linear solve failed (condition estimate {condition:e}): {reason}")]
    Solve { condition: f64, reason: String },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("wrong parameterization: {0}")]
    Parameterization(String),

    #[error("every learning-rate candidate diverged")]
    AllCandidatesDiverged,

    #[error("config error: {0}")]
    Config(String),

    #[error("plot error: {0}")]
    Plot(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
