use std::path::PathBuf;

use thiserror::Error;

/// Anything that stops a command. Domain errors carry the core error and
/// exit with 1; everything about the invocation or the input files exits
/// with 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Domain(shiftkit_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Domain(e) if !e.is_usage() => 1,
            _ => 2,
        }
    }

    /// Canonical error name for reports.
    pub fn name(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "UsageError",
            CliError::Io { .. } => "IoError",
            CliError::Parse { .. } => "ParseError",
            CliError::Domain(e) => e.name(),
        }
    }
}

impl From<shiftkit_core::Error> for CliError {
    fn from(e: shiftkit_core::Error) -> Self {
        CliError::Domain(e)
    }
}
