use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("hardware config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("workload error in `{field}`: {reason}")]
    Workload { field: String, reason: String },

    #[error("fast Hadamard mode needs a power-of-two length, got {0}")]
    HtuMode(u64),

    #[error(transparent)]
    Model(#[from] lightmamba_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

pub(crate) fn config_err(field: &str, reason: impl Into<String>) -> SimError {
    SimError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

pub(crate) fn workload_err(field: &str, reason: impl Into<String>) -> SimError {
    SimError::Workload {
        field: field.to_string(),
        reason: reason.into(),
    }
}
