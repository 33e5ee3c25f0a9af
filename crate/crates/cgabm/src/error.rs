use std::path::PathBuf;

/// Failures of the experiment driver, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CgError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("acceptance check failed: {0}")]
    Acceptance(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CgError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CgError::Config(_) => 2,
            CgError::Stage { .. } | CgError::Format { .. } | CgError::Io { .. } => 3,
            CgError::Acceptance(_) => 4,
        }
    }

    pub fn stage(stage: &'static str, err: impl std::fmt::Display) -> Self {
        CgError::Stage { stage, message: err.to_string() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CgError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        CgError::Format { path: path.into(), message: message.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, CgError>;
