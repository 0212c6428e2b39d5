//! Encoder-decoder network predicting dense flow and matchability from an image
//! pair, with analytic gradients, the masked flow + cross-entropy loss and the
//! two-stage training curriculum.
//!
//! Everything is generic over [`Real`]: training runs in `f32`, gradient checks
//! in `f64`.

pub mod error;
pub mod layers;
pub mod loss;
pub mod network;
pub mod predict;
pub mod spec;
pub mod train;
pub mod weights;

pub use error::{NetError, Result};
pub use layers::{Real, Tensor};
pub use loss::{loss, loss_and_grads, LossBreakdown, LossConfig};
pub use network::{backward, forward, forward_tensors, ForwardCache};
pub use predict::{Prediction, Predictor};
pub use spec::NetworkSpec;
pub use train::{sample_gradient, train_stage, write_log_csv, LogRow, Sample, TrainConfig, TrainOutcome};
pub use weights::Weights;
