use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulation, training and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("weight file {path}: {reason}")]
    WeightFormat { path: PathBuf, reason: String },

    #[error("non-finite loss during update: {0}")]
    NonFiniteLoss(String),

    #[error("unresolvable policy reference: {0}")]
    PolicyRef(String),

    #[error("replay diverged at step {step}: {field} (recorded {recorded}, replayed {replayed})")]
    Divergence {
        step: usize,
        field: String,
        recorded: String,
        replayed: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image encoding: {0}")]
    Image(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
