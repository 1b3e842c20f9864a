use heng_core::error::{DatasetError, ModelError, NetworkError, TransportError};
use thiserror::Error;

/// Exit 2 for unreadable or malformed input, exit 1 for everything the
/// domain rejects.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Domain(_) => 1,
        }
    }

    pub fn input(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Input(format!("{context}: {err}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<TransportError> for CliError {
    fn from(e: TransportError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(_) | ModelError::Json(_) | ModelError::Checkpoint(_) => CliError::Input(e.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(_)
            | DatasetError::Json(_)
            | DatasetError::Format { .. }
            | DatasetError::Version(_)
            | DatasetError::Config(_) => CliError::Input(e.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}
