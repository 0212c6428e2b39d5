//! Mini-batch training with Adam and the two-stage curriculum.
//!
//! Stage one (pre-training) uses one shared encoder on random synthetic pairs.
//! Stage two (fine-tuning) starts from two copies of that encoder and always sees
//! the frontal template as target. Per-sample gradients are computed in parallel
//! and summed in batch order, so results do not depend on the thread count.

use std::io::Write;
use std::time::Instant;

use densecorr_core::datagen::{FlowField, MatchabilityMask, Stage, TrainingPair};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::layers::{Real, Tensor};
use crate::loss::{loss_and_grads, LossBreakdown, LossConfig};
use crate::network::{backward, forward_tensors};
use crate::weights::Weights;

/// One training example with inputs already normalized.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub source: Tensor<T>,
    pub target: Tensor<T>,
    pub gt_flow: FlowField,
    pub gt_mask: MatchabilityMask,
}

impl<T: Real> Sample<T> {
    pub fn from_pair(pair: &TrainingPair) -> Self {
        Sample {
            source: Tensor::from_rgb(&pair.source),
            target: Tensor::from_rgb(&pair.target),
            gt_flow: pair.gt_flow.clone(),
            gt_mask: pair.gt_mask.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// The learning rate is divided by `lr_drop_factor` once `lr_drop_fraction`
    /// of the steps have run.
    pub lr_drop_factor: f64,
    pub lr_drop_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 12,
            learning_rate: 1e-4,
            lr_drop_factor: 10.0,
            lr_drop_fraction: 0.75,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            loss: LossConfig::default(),
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.lr_drop_factor > 0.0
            && (0.0..=1.0).contains(&self.lr_drop_fraction)
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0
            && self.loss.lambda >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(NetError::Config(format!("invalid training settings: {self:?}")))
        }
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        if (step as f64) < self.lr_drop_fraction * self.steps as f64 {
            self.learning_rate
        } else {
            self.learning_rate / self.lr_drop_factor
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub stage: Stage,
    pub loss: LossBreakdown,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: Weights<f32>,
    pub log: Vec<LogRow>,
    /// Step at which the loss stopped being finite; `weights` is then the last
    /// finite checkpoint.
    pub diverged_at: Option<usize>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f32], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let update = lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.adam_eps);
            params[i] = (params[i] as f64 - update) as f32;
        }
    }
}

/// Loss and gradient of one sample.
pub fn sample_gradient<T: Real>(weights: &Weights<T>, sample: &Sample<T>, loss: LossConfig) -> Result<(LossBreakdown, Vec<T>)> {
    let cache = forward_tensors(weights, sample.source.clone(), sample.target.clone())?;
    let (breakdown, dflow, dlogits) = loss_and_grads(cache.flow_output(), cache.logits(), &sample.gt_flow, &sample.gt_mask, loss)?;
    Ok((breakdown, backward(weights, &cache, dflow, dlogits)))
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len() as f64;
    let flow_term = parts.iter().map(|b| b.flow_term).sum::<f64>() / n;
    let match_term = parts.iter().map(|b| b.match_term).sum::<f64>() / n;
    let lambda = parts[0].lambda;
    LossBreakdown {
        flow_term,
        match_term,
        lambda,
        total: flow_term + lambda * match_term,
    }
}

/// Runs one curriculum stage. Fine-tuning converts shared weights to two
/// encoders first (both copies bit-identical to the shared encoder).
pub fn train_stage(weights: Weights<f32>, data: &[Sample<f32>], stage: Stage, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(NetError::Data("training set is empty".into()));
    }
    let mut weights = match stage {
        Stage::Pretrain if !weights.spec.share_encoders => {
            return Err(NetError::Config("pre-training expects shared-encoder weights".into()));
        }
        Stage::Pretrain => weights,
        Stage::Finetune => weights.unshare(),
    };
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(match stage {
        Stage::Pretrain => 1,
        Stage::Finetune => 2,
    });
    let mut order: Vec<usize> = Vec::new();
    let mut adam = Adam::new(weights.params.len());
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
                order.reverse();
            }
            batch.push(order.pop().unwrap());
        }
        let results: Vec<(LossBreakdown, Vec<f32>)> = batch
            .par_iter()
            .map(|&i| sample_gradient(&weights, &data[i], cfg.loss))
            .collect::<Result<_>>()
            .or_else(|e| match e {
                NetError::NonFinite { .. } => Ok(Vec::new()),
                other => Err(other),
            })?;
        let finite = !results.is_empty() && results.iter().all(|(b, g)| b.total.is_finite() && g.iter().all(|v| v.is_finite()));
        if !finite {
            return Ok(TrainOutcome {
                weights,
                log,
                diverged_at: Some(step),
            });
        }
        let mut grad = vec![0.0f64; weights.params.len()];
        for (_, g) in &results {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += *b as f64;
            }
        }
        let inv = 1.0 / results.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        let parts: Vec<LossBreakdown> = results.iter().map(|r| r.0).collect();
        let loss = mean_breakdown(&parts);
        let before = weights.params.clone();
        adam.step(&mut weights.params, &grad, cfg.learning_rate_at(step), cfg);
        if !weights.all_finite() {
            weights.params = before;
            return Ok(TrainOutcome {
                weights,
                log,
                diverged_at: Some(step),
            });
        }
        log.push(LogRow {
            step,
            stage,
            loss,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if step % 50 == 0 {
            log::info!("{stage:?} step {step}: total {:.5} (flow {:.5}, match {:.5})", loss.total, loss.flow_term, loss.match_term);
        }
    }
    Ok(TrainOutcome {
        weights,
        log,
        diverged_at: None,
    })
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Pretrain => "pretrain",
        Stage::Finetune => "finetune",
    }
}

/// Writes the training log as CSV: `step,stage,flow_term,match_term,total,wall_ms`.
/// With `include_time = false` the wall-clock column is left out, which makes the
/// file reproducible byte for byte.
pub fn write_log_csv<W: Write>(rows: &[LogRow], mut w: W, include_time: bool) -> Result<()> {
    if include_time {
        writeln!(w, "step,stage,flow_term,match_term,total,wall_ms")?;
    } else {
        writeln!(w, "step,stage,flow_term,match_term,total")?;
    }
    for r in rows {
        write!(w, "{},{},{},{},{}", r.step, stage_name(r.stage), r.loss.flow_term, r.loss.match_term, r.loss.total)?;
        if include_time {
            write!(w, ",{:.3}", r.wall_ms)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Mean total loss over a window of `k` rows starting at `start`.
pub fn smoothed_total(rows: &[LogRow], start: usize, k: usize) -> f64 {
    let window = &rows[start..(start + k).min(rows.len())];
    window.iter().map(|r| r.loss.total).sum::<f64>() / window.len() as f64
}
