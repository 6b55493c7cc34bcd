//! File formats, configuration and experiment runners around `ssr2gcd-core`.

pub mod config;
pub mod experiments;
pub mod formats;

use std::path::Path;

use ssr2gcd_core::model::DualBranchModel;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("{origin}:{line}:{col}: {message}")]
    Config {
        origin: String,
        line: usize,
        col: usize,
        message: String,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] ssr2gcd_core::Error),
    #[error("training diverged at epoch {epoch}, step {step}: {message}")]
    Diverged {
        epoch: usize,
        step: usize,
        message: String,
        last_good: Box<DualBranchModel>,
    },
}

impl LabError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
