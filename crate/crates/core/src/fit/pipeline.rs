//! Flow to fitted model in one call: correspondences, frontal start, solve.

use serde::{Deserialize, Serialize};

use super::{flow_to_correspondences, solve, CorrespondenceSet, FitOptions, FitParameters, FitReport};
use crate::datagen::{FlowField, MatchabilityMask};
use crate::error::{Error, Result};
use crate::facemodel::{CameraPose, MorphableModel};
use crate::raster::RenderedFace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowFitConfig {
    /// Pixels with matchability below this are ignored.
    pub match_threshold: f32,
    /// Sample every `stride`-th pixel in both directions.
    pub stride: u32,
    /// Face height as a fraction of the image height for the starting pose.
    pub init_fraction: f64,
    /// Starting yaw angles (radians); the solve with the lowest final energy wins.
    /// Profile views need a start on the correct side to avoid the mirrored minimum.
    pub init_yaws: Vec<f64>,
    /// Rescale the prior weights so the data/prior balance matches a fit at
    /// `prior_reference_size` pixels with every pixel sampled.
    pub scale_priors: bool,
    pub prior_reference_size: f64,
    pub solver: FitOptions,
}

impl Default for FlowFitConfig {
    fn default() -> Self {
        FlowFitConfig {
            match_threshold: 0.5,
            stride: 2,
            init_fraction: 0.6,
            init_yaws: vec![0.0, -0.9, 0.9],
            scale_priors: true,
            prior_reference_size: 128.0,
            solver: FitOptions::default(),
        }
    }
}

impl FlowFitConfig {
    /// Factor applied to `w_id` and `w_exp` for an image of `size`.
    ///
    /// The data term grows with the number of sampled pixels (`W*H / stride^2`)
    /// and with the squared pixel residuals (`W*H`), so a prior weight tuned at
    /// one resolution is far too strong at a smaller one.
    pub fn prior_scale(&self, size: (u32, u32)) -> f64 {
        if !self.scale_priors {
            return 1.0;
        }
        let area = size.0 as f64 * size.1 as f64 / (self.prior_reference_size * self.prior_reference_size);
        area * area / (self.stride as f64 * self.stride as f64)
    }

    /// Solver options with the priors rescaled for `size`.
    pub fn solver_for(&self, size: (u32, u32)) -> FitOptions {
        let k = self.prior_scale(size);
        FitOptions {
            w_id: self.solver.w_id * k,
            w_exp: self.solver.w_exp * k,
            ..self.solver.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowFit {
    pub fit: FitParameters,
    pub report: FitReport,
    pub correspondences: CorrespondenceSet,
    /// Matchable pixels whose flow endpoint missed the template face.
    pub dropped: usize,
}

/// Fits the model to a flow/matchability prediction against `template`,
/// starting from the frontal mean face centered on the matched pixels.
pub fn fit_from_flow(
    flow: &FlowField,
    matchability: &MatchabilityMask,
    template: &RenderedFace,
    model: &MorphableModel,
    config: &FlowFitConfig,
) -> Result<FlowFit> {
    let (correspondences, dropped) = flow_to_correspondences(flow, matchability, template, model, config.match_threshold, config.stride)?;
    if config.init_yaws.is_empty() {
        return Err(Error::Config("at least one starting yaw is required".into()));
    }
    if config.scale_priors && !(config.prior_reference_size > 0.0 && config.prior_reference_size.is_finite()) {
        return Err(Error::Config(format!("prior_reference_size must be positive, got {}", config.prior_reference_size)));
    }
    let solver = config.solver_for(correspondences.image_size);
    let frontal = FitParameters::frontal_init(model, correspondences.image_size, correspondences.centroid(), config.init_fraction)?;
    let mut best: Option<(FitParameters, FitReport)> = None;
    for &yaw in &config.init_yaws {
        let mut init = frontal.clone();
        init.pose = CameraPose::from_euler(init.pose.focal, [yaw, 0.0, 0.0], init.pose.translation)?;
        let (fit, report) = solve(&correspondences, model, &init, &solver)?;
        // strict comparison keeps the earliest start on ties
        if best.as_ref().is_none_or(|(_, b)| report.final_energy() < b.final_energy()) {
            best = Some((fit, report));
        }
    }
    let (fit, report) = best.expect("at least one start");
    Ok(FlowFit {
        fit,
        report,
        correspondences,
        dropped,
    })
}
