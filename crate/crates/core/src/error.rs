use thiserror::Error;

#[derive(Debug, Error)]
pub enum GmcdError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GmcdError {
    /// Short stable identifier, used by the CLI for machine-readable errors.
    pub fn code(&self) -> &'static str {
        match self {
            GmcdError::InvalidArgument(_) => "INVALID_ARGUMENT",
            GmcdError::Numeric(_) => "NUMERIC",
            GmcdError::Degenerate(_) => "DEGENERATE",
            GmcdError::Integrity(_) => "INTEGRITY",
            GmcdError::Parse(_) => "PARSE",
            GmcdError::Io(_) => "IO",
            GmcdError::Json(_) => "JSON",
        }
    }
}

pub type Result<T> = std::result::Result<T, GmcdError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(GmcdError::InvalidArgument(msg.into()))
}
