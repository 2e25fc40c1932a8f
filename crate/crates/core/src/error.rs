use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the portfolio construction framework.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no instances")]
    NoInstances,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("space parse error at line {line}: {message}")]
    SpaceParse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    FeatureDimension { expected: usize, actual: usize },

    #[error("no training data")]
    NoTrainingData,

    #[error("unknown instance `{0}`")]
    UnknownInstance(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("failed to spawn wrapper `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),

    /// Command-line usage error, already rendered for the terminal.
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
