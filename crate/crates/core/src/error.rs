use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum MvarError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing checkpoint for lead {0}h")]
    MissingCheckpoint(u32),

    #[error("missing timeline entry at offset {0}h")]
    MissingTimeline(i64),

    #[error("missing meteorological data: {0}")]
    MissingMeteo(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl MvarError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        MvarError::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MvarError::InvalidArgument(msg.into())
    }
}

impl From<serde_json::Error> for MvarError {
    fn from(e: serde_json::Error) -> Self {
        MvarError::Format(e.to_string())
    }
}

impl From<csv::Error> for MvarError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        MvarError::Parse {
            line,
            message: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, MvarError>;
