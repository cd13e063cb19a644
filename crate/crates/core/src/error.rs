use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: {message}")]
    Shape { layer: usize, message: String },

    #[error("invalid tensor: {0}")]
    Tensor(String),

    #[error("label {label} out of range for {classes} classes (sample {sample})")]
    Label {
        label: usize,
        classes: usize,
        sample: usize,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("divergence at ADMM iteration {iteration}: {message}")]
    Divergence { iteration: usize, message: String },

    #[error("quantization error: {0}")]
    Quant(String),

    #[error("layer {layer} is not feasible for its quantization scheme")]
    Infeasible { layer: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed data in {path} at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    /// True for failures caused by numerical blow-up rather than bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::NonFinite { .. })
    }
}
