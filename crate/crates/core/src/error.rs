use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("loss {loss} is not valid for a {role} model")]
    LossRoleMismatch { loss: String, role: String },

    #[error("parse error at byte offset {offset}: {reason}")]
    Parse { offset: u64, reason: String },

    #[error("csv row {row}: {reason}")]
    Csv { row: usize, reason: String },

    #[error("privacy budget epsilon={epsilon} is unreachable for any sigma <= {sigma_max}")]
    UnreachableBudget { epsilon: f64, sigma_max: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
