use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CdmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CdmError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("timestep {t} out of range 0..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

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

impl CdmError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CdmError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn non_finite(context: impl Into<String>) -> Self {
        CdmError::NonFinite {
            context: context.into(),
        }
    }

    /// True for errors caused by a numeric blow-up rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, CdmError::NonFinite { .. })
    }
}
