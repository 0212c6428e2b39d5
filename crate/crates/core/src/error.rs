use thiserror::Error;

/// Errors produced anywhere in the correspondence / fitting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("malformed {kind} data: {reason}")]
    Format { kind: &'static str, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical fault: {0}")]
    Numerical(String),
    #[error("face projects outside the crop ({bound} bound)")]
    OutOfBounds { bound: &'static str },
    #[error("target render has an empty face mask")]
    EmptyTarget,
    #[error("no usable correspondences ({dropped} endpoints fell off the template face)")]
    NoCorrespondences { dropped: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(kind: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            kind,
            reason: reason.into(),
        }
    }
}
