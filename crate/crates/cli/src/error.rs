use std::io;
use std::path::Path;

use harp_core::HarpError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("log error: {0}")]
    Log(String),
    #[error("replay mismatch: {0}")]
    Mismatch(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Core(HarpError),
}

impl CliError {
    /// Process exit status: 2 config, 3 numeric, 4 protocol, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Protocol(_) => 4,
            _ => 1,
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            context: path.display().to_string(),
            source,
        }
    }
}

impl From<HarpError> for CliError {
    fn from(e: HarpError) -> Self {
        match e {
            HarpError::Config(m) => CliError::Config(m),
            HarpError::Numeric(m) => CliError::Numeric(m),
            HarpError::Protocol(m) => CliError::Protocol(m),
            other => CliError::Core(other),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
