use thiserror::Error;

/// Failure classes of a command, each with its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("acceptance check failed: {0}")]
    Acceptance(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Acceptance(_) => 3,
        }
    }

    pub fn status(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation_error",
            CliError::Runtime(_) => "runtime_error",
            CliError::Acceptance(_) => "acceptance_failed",
        }
    }
}

impl From<ctrl_core::Error> for CliError {
    fn from(e: ctrl_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(format!("json: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Maps a core validation failure to exit status 1.
pub fn invalid(e: ctrl_core::Error) -> CliError {
    CliError::Validation(e.to_string())
}
