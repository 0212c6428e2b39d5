//! Dense facial correspondence and morphable-model alignment.
//!
//! The crate is organised as a pipeline:
//!
//! 1. [`facemodel`] – linear morphable face model, camera pose and perspective projection.
//! 2. [`raster`] – deterministic software rasterizer with uv/attribute buffers, SH lighting,
//!    backgrounds and rectangle occluders.
//! 3. [`datagen`] – ground-truth flow and matchability by nearest-uv matching, training pairs.
//! 4. [`fit`] – 2D-3D correspondences from flow and the damped Gauss-Newton model fit.
//! 5. [`evalkit`] – landmark NMS, yaw bucketing and flow endpoint error.
//!
//! The network that predicts flow lives in the `densecorr-flownet` crate.

pub mod datagen;
pub mod error;
pub mod evalkit;
pub mod facemodel;
pub mod fit;
pub mod raster;
pub mod viz;

pub use error::{Error, Result};
