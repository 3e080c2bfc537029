use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty stack for entity `{0}`: at least one frame is required")]
    EmptyStack(String),

    #[error("invalid stack for entity `{entity}`: {reason}")]
    InvalidStack { entity: String, reason: String },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid labels: {0}")]
    InvalidLabels(String),

    #[error("duplicate entity id `{0}`")]
    DuplicateEntity(String),

    #[error("label references unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("batch size must be positive")]
    EmptyBatch,

    #[error("pair ({0}, {1}) contains a zero-norm embedding")]
    ZeroNormEmbedding(usize, usize),

    #[error("need at least {needed} distinct rows for k-means, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("classifier mode `{mode}` {reason}")]
    ModeMismatch { mode: String, reason: String },

    #[error("label store key collision on `{0}`")]
    LabelCollision(String),

    #[error("malformed {kind} file {path}: {reason}")]
    Format {
        kind: &'static str,
        path: PathBuf,
        reason: String,
    },

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

    pub(crate) fn format(kind: &'static str, path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Format {
            kind,
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
