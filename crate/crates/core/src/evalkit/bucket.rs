//! Per-image errors grouped by absolute yaw.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bucket bounds in degrees: `[0, 30)`, `[30, 60)`, `[60, 90]`; anything beyond 90
/// is counted in the last bucket.
pub const YAW_BUCKETS: [(f64, f64); 3] = [(0.0, 30.0), (30.0, 60.0), (60.0, 90.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_image: Vec<f64>,
    /// Absolute yaw per image, degrees.
    pub abs_yaw_deg: Vec<f64>,
    /// Mean per bucket; `None` for an empty bucket.
    pub bucket_means: [Option<f64>; 3],
    pub bucket_counts: [usize; 3],
    pub overall: f64,
    /// Images with |yaw| > 90 degrees (included in the last bucket).
    pub beyond_90: usize,
}

fn bucket_of(abs_deg: f64) -> usize {
    if abs_deg < YAW_BUCKETS[0].1 {
        0
    } else if abs_deg < YAW_BUCKETS[1].1 {
        1
    } else {
        2
    }
}

/// Groups per-image errors by `|yaw|` (degrees).
pub fn bucket_by_yaw(results: &[f64], yaws_deg: &[f64]) -> Result<EvalResult> {
    if results.len() != yaws_deg.len() {
        return Err(Error::DimensionMismatch {
            context: "yaw per evaluated image",
            expected: results.len(),
            actual: yaws_deg.len(),
        });
    }
    let abs_yaw_deg: Vec<f64> = yaws_deg.iter().map(|y| y.abs()).collect();
    let mut sums = [0.0; 3];
    let mut counts = [0; 3];
    for (&r, &y) in results.iter().zip(&abs_yaw_deg) {
        let b = bucket_of(y);
        sums[b] += r;
        counts[b] += 1;
    }
    let bucket_means = [0, 1, 2].map(|b| (counts[b] > 0).then(|| sums[b] / counts[b] as f64));
    let overall = if results.is_empty() {
        f64::NAN
    } else {
        results.iter().sum::<f64>() / results.len() as f64
    };
    Ok(EvalResult {
        per_image: results.to_vec(),
        beyond_90: abs_yaw_deg.iter().filter(|&&y| y > 90.0).count(),
        abs_yaw_deg,
        bucket_means,
        bucket_counts: counts,
        overall,
    })
}

fn fmt_mean(m: Option<f64>) -> String {
    m.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

impl EvalResult {
    /// Human-readable summary table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>7} {:>10}", "yaw bucket", "count", "mean NMS");
        for (b, (lo, hi)) in YAW_BUCKETS.iter().enumerate() {
            let label = format!("[{lo:.0},{hi:.0}{}", if b == 2 { "]" } else { ")" });
            let _ = writeln!(out, "{label:<12} {:>7} {:>10}", self.bucket_counts[b], fmt_mean(self.bucket_means[b]));
        }
        let _ = writeln!(out, "{:<12} {:>7} {:>10}", "overall", self.per_image.len(), fmt_mean(Some(self.overall).filter(|v| v.is_finite())));
        if self.beyond_90 > 0 {
            let _ = writeln!(out, "note: {} image(s) beyond 90 degrees counted in [60,90]", self.beyond_90);
        }
        out
    }

    /// Summary as CSV: `bucket,count,mean_nms`, empty mean for empty buckets.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket,count,mean_nms\n");
        let labels = ["0-30", "30-60", "60-90"];
        for b in 0..3 {
            let mean = self.bucket_means[b].map_or(String::new(), |m| format!("{m}"));
            let _ = writeln!(out, "{},{},{}", labels[b], self.bucket_counts[b], mean);
        }
        let overall = if self.overall.is_finite() { format!("{}", self.overall) } else { String::new() };
        let _ = writeln!(out, "overall,{},{}", self.per_image.len(), overall);
        out
    }
}
