use thiserror::Error;

/// Errors raised by the flow network: shape contracts, numerical faults,
/// weight-file problems and training divergence.
#[derive(Debug, Error)]
pub enum NetError {
    #[error("size mismatch in {context}: expected {expected:?}, got {actual:?}")]
    SizeMismatch {
        context: &'static str,
        expected: (usize, usize, usize),
        actual: (usize, usize, usize),
    },
    #[error("non-finite activation at layer {layer} ({name})")]
    NonFinite { layer: usize, name: String },
    #[error("matchability {value} at pixel {pixel} lies outside (0, 1) after clamping")]
    InvalidProbability { pixel: usize, value: f64 },
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("malformed weights file: {0}")]
    Format(String),
    #[error("training diverged at step {step}: total loss is not finite")]
    Diverged { step: usize },
    #[error("training configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] densecorr_core::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;
