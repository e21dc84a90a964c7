use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("operation is undefined on the terminal state")]
    TerminalState,

    #[error("network key `{key}`{}: {reason}", row.map(|r| format!(" row {r}")).unwrap_or_default())]
    InvalidNetwork {
        key: &'static str,
        row: Option<usize>,
        reason: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite training target at sample {0}")]
    NonFiniteTarget(usize),

    #[error("horizon {requested} exceeds the exact-expansion limit {limit}")]
    HorizonTooLarge { requested: usize, limit: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
