use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(rome_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Some seeds failed; results for the others were written.
    #[error("partial results: {failed} of {total} runs failed (first error: {first})")]
    Partial { failed: usize, total: usize, first: String },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
            CliError::Io { .. } | CliError::Csv(_) => 2,
            CliError::Partial { .. } => 4,
        }
    }
}

impl From<rome_core::Error> for CliError {
    fn from(e: rome_core::Error) -> Self {
        match e {
            rome_core::Error::Config(msg) => CliError::Config(msg),
            other => CliError::Core(other),
        }
    }
}
