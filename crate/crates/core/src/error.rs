use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MapError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("grid index out of range on axis {axis}: {index} not in [0, {limit})")]
    Range { axis: char, index: i64, limit: i64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("format error in {}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: u64, detail: String },
}

impl MapError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MapError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        MapError::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
