//! File formats, configuration and subcommands of the `instassoc` tool.

pub mod commands;
pub mod config;
pub mod formats;

pub use config::{ConfigError, RunConfig};
pub use formats::FormatError;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const VALIDATION: u8 = 2;
    pub const CHECK_FAILED: u8 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Core(#[from] instassoc_core::Error),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Config(_) | CliError::Format(_) | CliError::Core(_) => exit::VALIDATION,
            CliError::CheckFailed(_) => exit::CHECK_FAILED,
        }
    }
}
