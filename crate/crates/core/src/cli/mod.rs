//! Config-driven runs: scenario assembly, scans, CSV output and the command
//! line front end.

pub mod commands;
pub mod config;
pub mod output;
pub mod pipeline;
pub mod scan;

pub use commands::{run, Cli};
pub use config::{ConfigError, RunConfig};

/// Failure of a command, with its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(#[from] crate::Error),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("schema error in {path}: {message}")]
    Schema { path: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Io { .. }) => 3,
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io { .. } | CliError::Schema { .. } => 3,
        }
    }

    pub(crate) fn config(path: &str, message: impl std::fmt::Display) -> Self {
        CliError::Config(ConfigError::Invalid {
            path: path.into(),
            message: message.to_string(),
        })
    }
}
