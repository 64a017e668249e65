use std::path::PathBuf;

use eprop_core::EpropError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid task configuration: {0}")]
    Config(String),

    #[error("malformed event data at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("dataset not found at {0}")]
    MissingDataset(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] EpropError),
}

impl From<TaskError> for EpropError {
    fn from(e: TaskError) -> Self {
        match e {
            TaskError::Core(inner) => inner,
            TaskError::Config(m) => EpropError::InvalidConfig(m),
            other => EpropError::Io(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, TaskError>;

pub(crate) fn config(msg: impl Into<String>) -> TaskError {
    TaskError::Config(msg.into())
}
