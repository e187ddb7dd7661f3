//! Error type shared across the crate.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    #[error("shape mismatch at {context}: {detail}")]
    Shape { context: String, detail: String },

    /// A forward pass produced NaN or infinity.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// An API was called out of contract (wrong order, mismatched options).
    #[error("usage error: {0}")]
    Usage(String),

    /// Pixel or view index outside the valid range.
    #[error("out of range: {0}")]
    Range(String),

    /// A gradient or loss became non-finite during training.
    #[error("non-finite {quantity} at iteration {iteration} ({detail})")]
    Diverged {
        quantity: String,
        iteration: usize,
        detail: String,
    },

    /// Dataset / checkpoint / bank files that fail validation.
    #[error("parse error in {file}: {detail}")]
    Parse { file: String, detail: String },

    /// Persisted artifacts that disagree with their manifest.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("unknown scene '{0}'")]
    UnknownScene(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(String),
}

impl Error {
    pub fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub fn parse(file: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            detail: detail.into(),
        }
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}
