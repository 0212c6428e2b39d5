//! Masked flow error plus matchability cross-entropy.
//!
//! `L = sum_p m(p) |F(p) - F~(p)|^2 + lambda * sum_p CE(m~(p), m(p))`, where `m` is the
//! ground-truth mask. With `normalize` both sums are divided by the pixel count so
//! `lambda` does not depend on resolution. Probabilities are clamped to
//! `[1e-7, 1 - 1e-7]` before the logarithm.

use densecorr_core::datagen::{FlowField, MatchabilityMask};
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::layers::{Real, Tensor};
use crate::network::match_probability;

pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub flow_term: f64,
    pub match_term: f64,
    pub lambda: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda: f64,
    /// Divide both sums by the number of pixels.
    pub normalize: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1.0,
            normalize: true,
        }
    }
}

fn check_plane(context: &'static str, w: u32, h: u32, gt: &FlowField) -> Result<()> {
    if (w, h) != (gt.width, gt.height) {
        return Err(NetError::SizeMismatch {
            context,
            expected: (1, gt.height as usize, gt.width as usize),
            actual: (1, h as usize, w as usize),
        });
    }
    Ok(())
}

/// Shared accumulation. `pred(i)` yields the predicted flow and `P(matchable)`.
fn accumulate(n: usize, pred: impl Fn(usize) -> ([f64; 2], f64), gt_flow: &FlowField, gt_mask: &MatchabilityMask, cfg: LossConfig) -> Result<LossBreakdown> {
    let (mut flow_term, mut match_term) = (0.0, 0.0);
    for i in 0..n {
        let (f, p) = pred(i);
        let m = gt_mask.data[i] as f64;
        let g = gt_flow.data[i];
        let (du, dv) = (f[0] - g[0] as f64, f[1] - g[1] as f64);
        flow_term += m * (du * du + dv * dv);
        let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        if !(pc > 0.0 && pc < 1.0) {
            return Err(NetError::InvalidProbability { pixel: i, value: p });
        }
        match_term -= m * pc.ln() + (1.0 - m) * (1.0 - pc).ln();
    }
    let scale = if cfg.normalize { 1.0 / n as f64 } else { 1.0 };
    let (flow_term, match_term) = (flow_term * scale, match_term * scale);
    Ok(LossBreakdown {
        flow_term,
        match_term,
        lambda: cfg.lambda,
        total: flow_term + cfg.lambda * match_term,
    })
}

/// Loss of predicted planes against ground truth.
pub fn loss(pred_flow: &FlowField, pred_match: &MatchabilityMask, gt_flow: &FlowField, gt_mask: &MatchabilityMask, cfg: LossConfig) -> Result<LossBreakdown> {
    check_plane("predicted flow", pred_flow.width, pred_flow.height, gt_flow)?;
    check_plane("predicted matchability", pred_match.width, pred_match.height, gt_flow)?;
    check_plane("ground-truth mask", gt_mask.width, gt_mask.height, gt_flow)?;
    let pred = |i: usize| {
        let f = pred_flow.data[i];
        ([f[0] as f64, f[1] as f64], pred_match.data[i] as f64)
    };
    accumulate(gt_flow.data.len(), pred, gt_flow, gt_mask, cfg)
}

/// Loss of raw network outputs plus its gradient with respect to the flow
/// output and the two logit channels.
pub fn loss_and_grads<T: Real>(
    flow: &Tensor<T>,
    logits: &Tensor<T>,
    gt_flow: &FlowField,
    gt_mask: &MatchabilityMask,
    cfg: LossConfig,
) -> Result<(LossBreakdown, Tensor<T>, Tensor<T>)> {
    check_plane("network flow", flow.w as u32, flow.h as u32, gt_flow)?;
    check_plane("ground-truth mask", gt_mask.width, gt_mask.height, gt_flow)?;
    let n = flow.h * flow.w;
    let prob = |i: usize| match_probability(logits.data[i].as_f64(), logits.data[n + i].as_f64());
    let pred = |i: usize| ([flow.data[i].as_f64(), flow.data[n + i].as_f64()], prob(i));
    let breakdown = accumulate(n, pred, gt_flow, gt_mask, cfg)?;
    let scale = if cfg.normalize { 1.0 / n as f64 } else { 1.0 };
    let mut dflow = Tensor::zeros(2, flow.h, flow.w);
    let mut dlogits = Tensor::zeros(2, flow.h, flow.w);
    for i in 0..n {
        let m = gt_mask.data[i] as f64;
        let g = gt_flow.data[i];
        dflow.data[i] = T::from_f64(2.0 * scale * m * (flow.data[i].as_f64() - g[0] as f64));
        dflow.data[n + i] = T::from_f64(2.0 * scale * m * (flow.data[n + i].as_f64() - g[1] as f64));
        let p = prob(i);
        // the clamp is flat outside [eps, 1 - eps]
        if p > PROB_EPS && p < 1.0 - PROB_EPS {
            let dz = cfg.lambda * scale * (p - m);
            dlogits.data[n + i] = T::from_f64(dz);
            dlogits.data[i] = T::from_f64(-dz);
        }
    }
    Ok((breakdown, dflow, dlogits))
}
