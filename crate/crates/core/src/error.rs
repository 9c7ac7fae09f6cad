//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("action rejected: {0}")]
    RejectedAction(String),

    #[error("infeasible intervention at step {step}: {reason}")]
    InfeasibleIntervention { step: usize, reason: String },

    #[error("degenerate mask: no function is selectable")]
    DegenerateMask,

    #[error("training diverged: {0}")]
    TrainingDivergence(String),

    #[error("data error at row {row}: {reason}")]
    Data { row: usize, reason: String },

    #[error("could not collect {wanted} traces within {attempts} attempts ({got} collected)")]
    InsufficientTraces {
        wanted: usize,
        got: usize,
        attempts: usize,
    },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
