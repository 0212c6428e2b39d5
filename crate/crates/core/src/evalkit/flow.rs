//! Dense-flow endpoint error and matchability precision/recall.

use serde::{Deserialize, Serialize};

use crate::datagen::{FlowField, MatchabilityMask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    /// Mean endpoint error (px) over pixels that are matchable in the ground truth
    /// and predicted matchable.
    pub epe: f64,
    pub precision: f64,
    pub recall: f64,
    /// Pixels entering the EPE.
    pub evaluated: usize,
}

/// Compares a predicted flow/matchability pair with ground truth. Ground-truth
/// pixels count as matchable when their mask is at least 0.5.
pub fn flow_epe(
    pred_flow: &FlowField,
    pred_match: &MatchabilityMask,
    gt_flow: &FlowField,
    gt_mask: &MatchabilityMask,
    threshold: f32,
) -> Result<FlowMetrics> {
    let n = gt_flow.data.len();
    let sizes = [
        (pred_flow.width, pred_flow.height),
        (pred_match.width, pred_match.height),
        (gt_mask.width, gt_mask.height),
    ];
    for (w, h) in sizes {
        if (w, h) != (gt_flow.width, gt_flow.height) {
            return Err(Error::DimensionMismatch {
                context: "flow evaluation planes",
                expected: n,
                actual: (w * h) as usize,
            });
        }
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    let mut sum = 0.0;
    for i in 0..n {
        let predicted = pred_match.data[i] >= threshold;
        let truth = gt_mask.data[i] >= 0.5;
        match (predicted, truth) {
            (true, true) => {
                tp += 1;
                let d = [
                    (pred_flow.data[i][0] - gt_flow.data[i][0]) as f64,
                    (pred_flow.data[i][1] - gt_flow.data[i][1]) as f64,
                ];
                sum += d[0].hypot(d[1]);
            }
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Err(Error::Data(format!(
            "no pixel is both predicted and ground-truth matchable ({} predicted, {} ground truth)",
            fp,
            fneg
        )));
    }
    Ok(FlowMetrics {
        epe: sum / tp as f64,
        precision: tp as f64 / (tp + fp) as f64,
        recall: tp as f64 / (tp + fneg) as f64,
        evaluated: tp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn planes(w: u32, h: u32, seed: u64) -> (FlowField, MatchabilityMask) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut flow = FlowField::zeros(w, h);
        let mut mask = MatchabilityMask::zeros(w, h);
        for i in 0..(w * h) as usize {
            flow.data[i] = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            mask.data[i] = if rng.gen_bool(0.7) { 1.0 } else { 0.0 };
        }
        (flow, mask)
    }

    #[test]
    fn perfect_prediction() {
        let (f, m) = planes(8, 6, 1);
        let r = flow_epe(&f, &m, &f, &m, 0.5).unwrap();
        assert_eq!((r.epe, r.precision, r.recall), (0.0, 1.0, 1.0));
    }

    #[test]
    fn constant_offset_gives_unit_error() {
        let (f, m) = planes(8, 6, 2);
        let mut shifted = f.clone();
        shifted.data.iter_mut().for_each(|v| v[0] += 1.0);
        let r = flow_epe(&shifted, &m, &f, &m, 0.5).unwrap();
        assert!((r.epe - 1.0).abs() < 1e-5);
    }

    #[test]
    fn empty_intersection_and_size_mismatch_are_errors() {
        let (f, m) = planes(8, 6, 3);
        let none = MatchabilityMask::zeros(8, 6);
        let err = flow_epe(&f, &none, &f, &m, 0.5).unwrap_err().to_string();
        assert!(err.contains("0 predicted"), "{err}");
        let (g, n) = planes(6, 8, 3);
        assert!(flow_epe(&g, &n, &f, &m, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn rates_are_bounded_and_recall_falls_with_threshold(seed in any::<u64>(), t1 in 0.0..1.0f32, t2 in 0.0..1.0f32) {
            use rand::{Rng, SeedableRng};
            let (f, m) = planes(10, 10, seed);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let mut p = m.clone();
            p.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            if let (Ok(a), Ok(b)) = (flow_epe(&f, &p, &f, &m, lo), flow_epe(&f, &p, &f, &m, hi)) {
                for r in [a, b] {
                    prop_assert!((0.0..=1.0).contains(&r.precision) && (0.0..=1.0).contains(&r.recall));
                }
                prop_assert!(b.recall <= a.recall);
            }
        }
    }
}
