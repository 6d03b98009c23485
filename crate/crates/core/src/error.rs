use std::path::PathBuf;

use thiserror::Error;

use crate::windowing::Label;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("record {index} is out of chronological order")]
    OutOfOrder { index: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("class {class} has {available} rows but {required} are required")]
    Shortage {
        class: Label,
        available: usize,
        required: usize,
    },

    #[error("model fit failed: {0}")]
    Fit(String),

    #[error("unsupported file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
