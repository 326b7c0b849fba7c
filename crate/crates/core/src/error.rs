//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Missing or unusable configuration (dataset roots, weight caches, flags).
    #[error("configuration error: {0}")]
    Config(String),

    /// A request that violates a documented constraint.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("class {class} has only {available} records but {requested} were requested")]
    InsufficientClass {
        class: String,
        available: usize,
        requested: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("pretrained weights unavailable: {0}")]
    MissingWeights(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("failed to decode image {}: {message}", path.display())]
    Decode { path: PathBuf, message: String },

    #[error("non-finite training loss (seed {seed}, epoch {epoch}, lr {lr:e})")]
    NonFiniteLoss { seed: u64, epoch: usize, lr: f64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the request itself rather than by the run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Validation(_)
                | Error::InsufficientClass { .. }
                | Error::MissingWeights(_)
        )
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Validation(_) => "validation",
            Error::InsufficientClass { .. } => "insufficient_class",
            Error::Shape(_) => "shape",
            Error::MissingWeights(_) => "missing_weights",
            Error::Checkpoint(_) => "checkpoint",
            Error::Decode { .. } => "decode",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
