use thiserror::Error;

use crate::autograd::ParamStore;
use crate::domain::ViewLabel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite values at {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("missing view {0}")]
    MissingView(ViewLabel),

    #[error("duplicate view {0}")]
    DuplicateView(ViewLabel),

    #[error("manifest row {row}: {msg}")]
    Manifest { row: usize, msg: String },

    #[error("image decode failed: {0}")]
    Decode(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    /// Loss became non-finite; carries the best weights seen before that point.
    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        last_good: Box<ParamStore<f32>>,
    },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
