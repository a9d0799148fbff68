use std::path::Path;

use fairfactor::error::Error as CoreError;
use serde_json::json;
use thiserror::Error;

/// Failure of a CLI run, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration or flags (exit code 2).
    #[error("{0}")]
    Config(String),
    /// Unreadable, malformed or incomplete input data; failed writes (exit code 3).
    #[error("{0}")]
    Data(String),
    /// Solver or forecasting failure (exit code 4).
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Numerical(_) => "numerical",
        }
    }

    /// Single-line JSON record written to stderr on failure.
    pub fn record(&self, command: &str) -> String {
        json!({
            "error": {
                "kind": self.kind(),
                "exit_code": self.exit_code(),
                "command": command,
                "message": self.to_string(),
            }
        })
        .to_string()
    }

    pub(crate) fn io(action: &str, path: &Path, err: std::io::Error) -> Self {
        CliError::Data(format!("cannot {action} {}: {err}", path.display()))
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        let message = err.to_string();
        match err {
            CoreError::InvalidArgument(_) => CliError::Config(message),
            CoreError::Data(_) | CoreError::Shape(_) => CliError::Data(message),
            CoreError::Linalg(_) | CoreError::Transform(_) | CoreError::Forecast(_) => CliError::Numerical(message),
        }
    }
}

impl From<fairfactor::error::DataError> for CliError {
    fn from(err: fairfactor::error::DataError) -> Self {
        CliError::Data(err.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
