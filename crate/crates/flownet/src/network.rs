//! Forward and backward passes of the two-branch encoder / two-head decoder.
//!
//! Both inputs are encoded (by one shared encoder or one encoder each), the two
//! codes are concatenated along channels `[source, target]`, and the flow and
//! matchability decoders both read the concatenation. Matchability is the softmax
//! probability of the "matchable" class (logit channel 1).

use densecorr_core::datagen::{FlowField, MatchabilityMask};
use image::RgbImage;

use crate::error::{NetError, Result};
use crate::layers::{conv_backward, conv_forward, deconv_backward, deconv_forward, relu_backward_inplace, relu_inplace, Real, Tensor};
use crate::spec::{Branch, LayerDesc, LayerKind};
use crate::weights::Weights;

/// Activations of one branch: the input followed by every layer's output.
#[derive(Debug, Clone)]
pub struct BranchCache<T> {
    pub acts: Vec<Tensor<T>>,
}

impl<T> BranchCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.acts.last().expect("branch cache holds at least the input")
    }
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub source: BranchCache<T>,
    pub target: BranchCache<T>,
    pub flow: BranchCache<T>,
    pub matchability: BranchCache<T>,
}

impl<T: Real> ForwardCache<T> {
    /// Flow output, channels `(u, v)`.
    pub fn flow_output(&self) -> &Tensor<T> {
        self.flow.output()
    }

    /// Matchability logits, channels `(unmatchable, matchable)`.
    pub fn logits(&self) -> &Tensor<T> {
        self.matchability.output()
    }
}

fn branch_layers(layers: &[LayerDesc], branch: Branch) -> Vec<(usize, &LayerDesc)> {
    layers.iter().enumerate().filter(|(_, l)| l.branch == branch).collect()
}

fn run_branch<T: Real>(weights: &Weights<T>, layers: &[(usize, &LayerDesc)], input: Tensor<T>, cols: &mut Vec<T>) -> Result<BranchCache<T>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(input);
    for &(index, l) in layers {
        let x = acts.last().unwrap();
        let w = &weights.params[l.offset..l.offset + l.weight_len()];
        let b = &weights.params[l.offset + l.weight_len()..l.offset + l.param_len()];
        let mut y = match l.kind {
            LayerKind::Conv => conv_forward(x, w, b, l.cout, l.geom, cols),
            LayerKind::Deconv => deconv_forward(x, w, b, l.cout, l.geom),
        };
        if l.relu {
            relu_inplace(&mut y);
        }
        if !y.all_finite() {
            return Err(NetError::NonFinite {
                layer: index,
                name: l.name.clone(),
            });
        }
        acts.push(y);
    }
    Ok(BranchCache { acts })
}

/// Backpropagates `dy` through a branch, accumulating parameter gradients into
/// `grad`. Returns the gradient at the branch input when `need_input_grad`.
fn backward_branch<T: Real>(
    weights: &Weights<T>,
    layers: &[(usize, &LayerDesc)],
    cache: &BranchCache<T>,
    mut dy: Tensor<T>,
    grad: &mut [T],
    need_input_grad: bool,
    cols: &mut Vec<T>,
) -> Option<Tensor<T>> {
    for (i, &(_, l)) in layers.iter().enumerate().rev() {
        if l.relu {
            relu_backward_inplace(&cache.acts[i + 1], &mut dy);
        }
        let x = &cache.acts[i];
        let w = &weights.params[l.offset..l.offset + l.weight_len()];
        let (gw, gb) = grad[l.offset..l.offset + l.param_len()].split_at_mut(l.weight_len());
        let need_dx = i > 0 || need_input_grad;
        let dx = match l.kind {
            LayerKind::Conv => conv_backward(x, &dy, w, gw, gb, l.geom, need_dx, cols),
            LayerKind::Deconv => deconv_backward(x, &dy, w, gw, gb, l.geom, need_dx, cols),
        };
        match dx {
            Some(dx) => dy = dx,
            None => return None,
        }
    }
    Some(dy)
}

fn check_input<T: Real>(weights: &Weights<T>, t: &Tensor<T>, context: &'static str) -> Result<()> {
    let (w, h) = weights.spec.input_size;
    if t.shape() != (3, h, w) {
        return Err(NetError::SizeMismatch {
            context,
            expected: (3, h, w),
            actual: t.shape(),
        });
    }
    Ok(())
}

/// Runs the target encoder alone; its output can be reused for a fixed target.
pub fn encode_target<T: Real>(weights: &Weights<T>, target: Tensor<T>) -> Result<BranchCache<T>> {
    check_input(weights, &target, "target image")?;
    let layers = weights.spec.layers();
    let branch = if weights.spec.share_encoders { Branch::EncoderA } else { Branch::EncoderB };
    run_branch(weights, &branch_layers(&layers, branch), target, &mut Vec::new())
}

/// Forward pass on normalized input tensors.
pub fn forward_tensors<T: Real>(weights: &Weights<T>, source: Tensor<T>, target: Tensor<T>) -> Result<ForwardCache<T>> {
    let target = encode_target(weights, target)?;
    forward_with_target(weights, source, target)
}

/// Forward pass reusing an already encoded target.
pub fn forward_with_target<T: Real>(weights: &Weights<T>, source: Tensor<T>, target: BranchCache<T>) -> Result<ForwardCache<T>> {
    check_input(weights, &source, "source image")?;
    let layers = weights.spec.layers();
    let mut cols = Vec::new();
    let source = run_branch(weights, &branch_layers(&layers, Branch::EncoderA), source, &mut cols)?;
    let code = Tensor::concat(source.output(), target.output());
    let flow = run_branch(weights, &branch_layers(&layers, Branch::FlowDecoder), code.clone(), &mut cols)?;
    let matchability = run_branch(weights, &branch_layers(&layers, Branch::MatchDecoder), code, &mut cols)?;
    Ok(ForwardCache {
        source,
        target,
        flow,
        matchability,
    })
}

/// Gradient of the loss with respect to every parameter, given the gradients at
/// the flow output and at the matchability logits.
pub fn backward<T: Real>(weights: &Weights<T>, cache: &ForwardCache<T>, dflow: Tensor<T>, dlogits: Tensor<T>) -> Vec<T> {
    let layers = weights.spec.layers();
    let mut grad = vec![T::zero(); weights.params.len()];
    let mut cols = Vec::new();
    let dcode_flow = backward_branch(weights, &branch_layers(&layers, Branch::FlowDecoder), &cache.flow, dflow, &mut grad, true, &mut cols)
        .expect("input gradient requested");
    let mut dcode = backward_branch(weights, &branch_layers(&layers, Branch::MatchDecoder), &cache.matchability, dlogits, &mut grad, true, &mut cols)
        .expect("input gradient requested");
    for (a, b) in dcode.data.iter_mut().zip(&dcode_flow.data) {
        *a = *a + *b;
    }
    let split = cache.source.output().data.len();
    let src_code = cache.source.output();
    let d_src = Tensor {
        c: src_code.c,
        h: src_code.h,
        w: src_code.w,
        data: dcode.data[..split].to_vec(),
    };
    let tgt_code = cache.target.output();
    let d_tgt = Tensor {
        c: tgt_code.c,
        h: tgt_code.h,
        w: tgt_code.w,
        data: dcode.data[split..].to_vec(),
    };
    let enc_a = branch_layers(&layers, Branch::EncoderA);
    backward_branch(weights, &enc_a, &cache.source, d_src, &mut grad, false, &mut cols);
    let enc_b = if weights.spec.share_encoders { enc_a } else { branch_layers(&layers, Branch::EncoderB) };
    backward_branch(weights, &enc_b, &cache.target, d_tgt, &mut grad, false, &mut cols);
    grad
}

/// Numerically stable `P(matchable)` from the two logits.
pub fn match_probability(l0: f64, l1: f64) -> f64 {
    let z = l1 - l0;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Converts the network outputs to flow / matchability planes.
pub fn outputs<T: Real>(cache: &ForwardCache<T>) -> (FlowField, MatchabilityMask) {
    let f = cache.flow_output();
    let l = cache.logits();
    let n = f.h * f.w;
    let mut flow = FlowField::zeros(f.w as u32, f.h as u32);
    let mut mask = MatchabilityMask::zeros(f.w as u32, f.h as u32);
    for i in 0..n {
        flow.data[i] = [f.data[i].as_f64() as f32, f.data[n + i].as_f64() as f32];
        mask.data[i] = match_probability(l.data[i].as_f64(), l.data[n + i].as_f64()) as f32;
    }
    (flow, mask)
}

/// Forward pass on 8-bit images, returning the flow and matchability planes.
pub fn forward<T: Real>(weights: &Weights<T>, source: &RgbImage, target: &RgbImage) -> Result<(FlowField, MatchabilityMask, ForwardCache<T>)> {
    let cache = forward_tensors(weights, Tensor::from_rgb(source), Tensor::from_rgb(target))?;
    let (flow, mask) = outputs(&cache);
    Ok((flow, mask, cache))
}
