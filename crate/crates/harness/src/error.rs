use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] lengen_core::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A report or CSV that cannot be plotted.
    #[error("{file}, row {row}: {detail}")]
    Report { file: PathBuf, row: usize, detail: String },

    #[error("config hash {actual} does not match manifest hash {expected}")]
    HashMismatch { expected: String, actual: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Stable identifier for the error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Core(lengen_core::Error::Diverged { .. }) => "diverged",
            Self::Core(lengen_core::Error::Sampler(_)) => "sampler",
            Self::Core(lengen_core::Error::Precondition(_)) => "precondition",
            Self::Core(lengen_core::Error::Config(_)) | Self::Config(_) => "config",
            Self::Core(_) => "numerics",
            Self::Io { .. } => "io",
            Self::Report { .. } => "report",
            Self::HashMismatch { .. } => "hash-mismatch",
            Self::Json(_) => "json",
            Self::Csv(_) => "csv",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "status": "error",
            "kind": self.kind(),
            "message": self.to_string(),
        })
    }
}
