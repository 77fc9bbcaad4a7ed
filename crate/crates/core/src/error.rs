use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DrimError>;

#[derive(Debug, Error)]
pub enum DrimError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("index {index} out of range for {what} with {len} rows")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate vector: row {row} has norm {norm:e}")]
    DegenerateVector { row: usize, norm: f64 },

    #[error("non-finite value in {param}: {detail}")]
    NonFinite { param: String, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl DrimError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DrimError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that stem from numerics (non-finite values,
    /// degenerate vectors) rather than from input data or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            DrimError::NonFinite { .. } | DrimError::DegenerateVector { .. }
        )
    }
}
