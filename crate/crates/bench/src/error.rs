use std::path::PathBuf;

use oedflow::DesignError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown experiment '{0}'")]
    UnknownExperiment(String),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Design(#[from] DesignError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
}

impl BenchError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
