//! Ground-truth dense flow and matchability from uv matching, plus training pairs.
//!
//! A source pixel corresponds to the target pixel whose interpolated uv is
//! nearest (Euclidean in uv). Matches farther than the uv threshold are
//! unmatchable, which covers both the face boundary and self-occluded regions.
//! Pixels hidden by synthetic occluders keep their correspondence.

pub mod io;
mod pairs;
mod uvindex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RenderedFace;

pub use pairs::{
    build_synthetic_set, import_fitted_image, perturb_crop, CropPerturbation, PairMeta, Stage,
    SyntheticSet, TrainingPair,
};
pub use uvindex::{uv_distance2, UvIndex};

pub const DEFAULT_UV_THRESHOLD: f32 = 0.015;

/// Per-pixel displacement `(dx, dy)` in pixels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn zeros(width: u32, height: u32) -> Self {
        FlowField {
            width,
            height,
            data: vec![[0.0; 2]; (width * height) as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> [f32; 2] {
        self.data[(y * self.width + x) as usize]
    }
}

/// Per-pixel matchability in `[0, 1]`; binary for ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchabilityMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl MatchabilityMask {
    pub fn zeros(width: u32, height: u32) -> Self {
        MatchabilityMask {
            width,
            height,
            data: vec![0.0; (width * height) as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn count_at_least(&self, threshold: f32) -> usize {
        self.data.iter().filter(|&&m| m >= threshold).count()
    }
}

/// Where a flow endpoint lands, rounded to the nearest pixel; `None` off-image.
pub fn endpoint_pixel(x: u32, y: u32, flow: [f32; 2], size: (u32, u32)) -> Option<(u32, u32)> {
    let ex = (x as f64 + flow[0] as f64).round();
    let ey = (y as f64 + flow[1] as f64).round();
    if ex < 0.0 || ey < 0.0 || ex >= size.0 as f64 || ey >= size.1 as f64 {
        return None;
    }
    Some((ex as u32, ey as u32))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchStats {
    pub source_face_pixels: usize,
    pub matchable: usize,
}

/// Ground-truth flow and binary matchability from `source` to `target`.
pub fn compute_gt_correspondence(
    source: &RenderedFace,
    target: &RenderedFace,
    uv_threshold: f32,
) -> Result<(FlowField, MatchabilityMask)> {
    let index = UvIndex::build(target);
    compute_gt_with_index(source, target, &index, uv_threshold)
}

/// As [`compute_gt_correspondence`] with a prebuilt index over `target`.
pub fn compute_gt_with_index(
    source: &RenderedFace,
    target: &RenderedFace,
    index: &UvIndex,
    uv_threshold: f32,
) -> Result<(FlowField, MatchabilityMask)> {
    if source.size() != target.size() {
        return Err(Error::DimensionMismatch {
            context: "source/target render width*height",
            expected: (target.width * target.height) as usize,
            actual: (source.width * source.height) as usize,
        });
    }
    if index.is_empty() {
        return Err(Error::EmptyTarget);
    }
    if !(uv_threshold > 0.0 && uv_threshold.is_finite()) {
        return Err(Error::InvalidInput(format!("uv threshold must be positive, got {uv_threshold}")));
    }
    let (w, h) = source.size();
    let thr2 = (uv_threshold as f64).powi(2);
    let mut flow = FlowField::zeros(w, h);
    let mut mask = MatchabilityMask::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            if !source.face_mask[i] {
                continue;
            }
            let (tx, ty, d2) = index.nearest(source.uv[i]).expect("index is nonempty");
            if d2 < thr2 {
                mask.data[i] = 1.0;
                flow.data[i] = [tx as f32 - x as f32, ty as f32 - y as f32];
            }
        }
    }
    Ok((flow, mask))
}
