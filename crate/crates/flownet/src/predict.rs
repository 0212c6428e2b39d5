//! Inference against the fixed frontal template.

use std::time::Instant;

use densecorr_core::datagen::{FlowField, MatchabilityMask};
use image::RgbImage;

use crate::error::Result;
use crate::layers::Tensor;
use crate::network::{encode_target, forward_with_target, outputs, BranchCache};
use crate::weights::Weights;

#[derive(Debug, Clone)]
pub struct Prediction {
    pub flow: FlowField,
    pub matchability: MatchabilityMask,
    pub elapsed_ms: f64,
}

/// Trained weights plus the template's encoding, computed once.
pub struct Predictor {
    weights: Weights<f32>,
    template_code: BranchCache<f32>,
}

impl Predictor {
    pub fn new(weights: Weights<f32>, template: &RgbImage) -> Result<Self> {
        let template_code = encode_target(&weights, Tensor::from_rgb(template))?;
        Ok(Predictor { weights, template_code })
    }

    pub fn weights(&self) -> &Weights<f32> {
        &self.weights
    }

    pub fn predict(&self, source: &RgbImage) -> Result<Prediction> {
        let start = Instant::now();
        let cache = forward_with_target(&self.weights, Tensor::from_rgb(source), self.template_code.clone())?;
        let (flow, matchability) = outputs(&cache);
        Ok(Prediction {
            flow,
            matchability,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}
