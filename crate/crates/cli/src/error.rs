use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable, malformed or invalid configuration or arguments.
    #[error("{0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit code: 2 for configuration problems, 3 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io { .. } => 1,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            context: format!("cannot write {}", path.display()),
            source,
        }
    }
}

impl From<cacc_core::Error> for CliError {
    fn from(e: cacc_core::Error) -> Self {
        match e {
            cacc_core::Error::Solver(msg) => CliError::Solver(msg),
            other => CliError::Config(other.to_string()),
        }
    }
}
