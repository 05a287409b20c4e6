use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("invalid annotation file {path}: {message}")]
    Annotation { path: PathBuf, message: String },

    #[error("missing mask for image `{0}`")]
    MissingMask(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("class id {class_id} out of range for {num_classes} classes")]
    ClassOutOfRange { class_id: usize, num_classes: usize },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("checkpoint does not match the model architecture; mismatched parameters: {}", .0.join(", "))]
    CheckpointMismatch(Vec<String>),

    #[error("average precision undefined: no ground-truth boxes in the evaluated set")]
    NoGroundTruth,

    #[error("non-finite loss at epoch {epoch} batch {batch} (samples: {}); dump written to {dump}", .ids.join(", "))]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        ids: Vec<String>,
        dump: PathBuf,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}
