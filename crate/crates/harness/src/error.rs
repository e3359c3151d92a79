use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] viewforge_core::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("no run reports found under {0}")]
    ExitEmpty(PathBuf),
    #[error("run failed: {0}")]
    RunFailed(String),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// `2` for usage and config problems, `1` for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Usage(_) | HarnessError::ExitEmpty(_) => 2,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "ConfigError",
            HarnessError::Usage(_) => "UsageError",
            HarnessError::Io { .. } => "IoError",
            HarnessError::Core(e) => e.name(),
            HarnessError::Json(_) => "JsonError",
            HarnessError::Csv(_) => "CsvError",
            HarnessError::ExitEmpty(_) => "ExitEmpty",
            HarnessError::RunFailed(_) => "RunFailed",
        }
    }
}
