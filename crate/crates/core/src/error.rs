use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed input: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("agent {0} has no assigned target")]
    Unassigned(usize),
    #[error("no targets left to assign")]
    NoTargets,
    #[error("assignment graph is not square ({rows} agents, {cols} slots)")]
    NotSquare { rows: usize, cols: usize },
    #[error("training split is empty")]
    EmptyTraining,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed weights file: {0}")]
    Weights(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
