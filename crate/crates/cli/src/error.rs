use std::path::{Path, PathBuf};

use funflow_core::FdaError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("no data: {0}")]
    NoData(String),

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: FdaError,
    },
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.to_path_buf(), message: e.to_string() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Parse { .. } => "parse",
            CliError::NoData(_) => "no-data",
            CliError::Io { .. } => "io",
            CliError::Stage { .. } => "stage",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Parse { .. } | CliError::NoData(_) => 3,
            CliError::Io { .. } => 4,
            CliError::Stage { .. } => 5,
        }
    }

    pub fn report(&self) -> ErrorReport {
        let (stage, line) = match self {
            CliError::Stage { stage, .. } => (Some(stage.to_string()), None),
            CliError::Parse { line, .. } => (None, Some(*line)),
            _ => (None, None),
        };
        ErrorReport { kind: self.kind(), stage, line, message: self.to_string(), exit_code: self.exit_code() }
    }
}

/// Machine-readable failure summary written as JSON.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<u64>,
    pub message: String,
    pub exit_code: i32,
}

pub(crate) trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageContext<T> for Result<T, FdaError> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}
