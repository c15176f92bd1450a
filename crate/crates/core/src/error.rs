use flamesentinel_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// Arguments outside an operation's domain (bad ROI, too few frames, ...).
    #[error("input domain error: {0}")]
    InputDomain(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn domain(msg: impl Into<String>) -> CoreError {
    CoreError::InputDomain(msg.into())
}
