use std::path::PathBuf;

use edcs_core::EdcsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] EdcsError),

    /// Core error tied to a config key.
    #[error("{key}: {source}")]
    At { key: String, source: EdcsError },

    #[error("{path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn at(key: impl Into<String>) -> impl FnOnce(EdcsError) -> CliError {
        let key = key.into();
        move |source| CliError::At { key, source }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    /// Process exit code: 2 config, 3 numeric, 4 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) | CliError::At { source: e, .. } => core_code(e),
            CliError::Toml { .. } | CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Csv { .. } | CliError::Json(_) => 4,
        }
    }
}

fn core_code(e: &EdcsError) -> i32 {
    match e {
        EdcsError::InvalidParameter { .. }
        | EdcsError::InfeasibleSqueezing { .. }
        | EdcsError::Mismatch(_)
        | EdcsError::Parse { .. }
        | EdcsError::NoLines
        | EdcsError::Aliasing { .. }
        | EdcsError::OffGrid { .. } => 2,
        EdcsError::NonConvergence { .. } | EdcsError::DegenerateJacobian(_) | EdcsError::Unreachable { .. } => 3,
        EdcsError::Format(_) | EdcsError::Io(_) | EdcsError::Csv(_) => 4,
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
