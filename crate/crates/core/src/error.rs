use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("ingestion error in {path} at row {row}: {message}")]
    Ingest {
        path: PathBuf,
        /// 1-based data row (header excluded).
        row: usize,
        message: String,
    },

    #[error("bad value `{value}` in {path} at (row {row}, column {column})")]
    BadCell {
        path: PathBuf,
        /// 1-based data row (header excluded).
        row: usize,
        column: String,
        value: String,
    },

    #[error("checkpoint error: {message} (tensors: {})", tensors.join(", "))]
    Checkpoint {
        message: String,
        tensors: Vec<String>,
    },

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("layer `{0}` has no analyzable Lipschitz constant")]
    NotAnalyzable(String),

    #[error("missing cell for row `{row}`, variant `{variant}`")]
    MissingCell { row: String, variant: String },

    #[error("training diverged at epoch {epoch}, step {step}; last finite loss {last_finite_loss}")]
    Diverged {
        epoch: usize,
        step: usize,
        last_finite_loss: f64,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
