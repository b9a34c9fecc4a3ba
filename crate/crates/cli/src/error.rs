use mvar_core::MvarError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed input or configuration.
    #[error("{0}")]
    Input(String),

    #[error("empty result: {0}")]
    Empty(String),

    /// An artifact a command depends on is absent.
    #[error("missing artifact: {0}")]
    Missing(String),

    #[error(transparent)]
    Core(#[from] MvarError),
}

impl CliError {
    pub fn missing(msg: impl Into<String>) -> Self {
        CliError::Missing(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Empty(_) => 3,
            CliError::Missing(_) => 4,
            CliError::Core(e) => match e {
                MvarError::EmptyDataset(_) => 3,
                MvarError::MissingCheckpoint(_) | MvarError::MissingMeteo(_) => 4,
                MvarError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 4,
                _ => 2,
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(MvarError::Io(e))
    }
}
