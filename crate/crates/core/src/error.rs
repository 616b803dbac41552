use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator, the learners and the file formats.
#[derive(Debug, Error)]
pub enum MacaError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("width mismatch in {what}: expected {expected}, got {got}")]
    WidthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("tape does not belong to this network state")]
    StaleTape,

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("shapley credit needs N! orderings; refusing N = {n} (limit {limit})")]
    TooManyAgents { n: usize, limit: usize },

    #[error("degenerate policy: {0}")]
    DegeneratePolicy(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}:{line}: {msg}")]
    Csv {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MacaError>;
