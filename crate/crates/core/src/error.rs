use std::io;

use thiserror::Error;

/// Errors produced by parameter derivation, configuration and the harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric parameter is outside the range its formula or model allows.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A configuration file or flag could not be understood.
    #[error("configuration error: {0}")]
    Config(String),

    /// Leader election produced no leader; the trial cannot form clusters.
    #[error("degenerate trial: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
