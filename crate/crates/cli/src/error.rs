use std::path::{Path, PathBuf};

use thiserror::Error;

pub type PipelineResult<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing upstream artifact {} (produced by `cotmap {stage}`)", path.display())]
    Missing { path: PathBuf, stage: &'static str },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] cotmap_core::Error),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.to_path_buf(), source }
    }

    pub fn parse(path: &Path, message: impl ToString) -> Self {
        PipelineError::Parse { path: path.to_path_buf(), message: message.to_string() }
    }

    /// 2 for validation errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        use cotmap_core::Error as E;
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Core(E::InvalidParameter(_) | E::OutOfWorld { .. } | E::PathThroughObstacle { .. }) => 2,
            _ => 1,
        }
    }
}
