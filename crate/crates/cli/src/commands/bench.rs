use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use densecorr_core::evalkit::benchmark::{load_item, read_index};
use densecorr_core::evalkit::{bucket_by_yaw, nms, EvalResult};
use densecorr_core::fit::landmarks_2d;
use densecorr_core::raster::{render_target_template, RenderedFace};
use densecorr_flownet::Predictor;
use rayon::prelude::*;

use super::fit::{fit_image, load_predictor};
use super::{create_dir, read_model};
use crate::config::{snapshot_in_dir, RunConfig};
use crate::error::{io_at, CliError, Result};

pub struct BenchArgs {
    pub bench: PathBuf,
    pub model: PathBuf,
    /// Network weights; not needed in perfect-prediction mode.
    pub weights: Option<PathBuf>,
    pub out: PathBuf,
}

/// One benchmark image. `nms` is `None` when the fit failed.
#[derive(Debug, Clone)]
pub struct ImageResult {
    pub index: usize,
    pub yaw_deg: f64,
    pub nms: Option<f64>,
    pub rms: f64,
    pub iterations: usize,
    pub converged: bool,
    pub descent_violations: usize,
    pub status: String,
}

pub struct BenchSummary {
    pub result: EvalResult,
    pub images: Vec<ImageResult>,
    pub failed: usize,
}

impl BenchSummary {
    pub fn per_image_csv(&self) -> String {
        let mut out = String::from("index,yaw_deg,nms,reprojection_rms,iterations,converged,descent_violations,status\n");
        for r in &self.images {
            let nms = r.nms.map_or(String::new(), |v| format!("{v:.6}"));
            let _ = writeln!(
                out,
                "{:06},{:.4},{nms},{:.6},{},{},{},{}",
                r.index, r.yaw_deg, r.rms, r.iterations, r.converged, r.descent_violations, r.status
            );
        }
        out
    }
}

/// Fits every benchmark image (from the network or, in perfect mode, from the
/// stored ground-truth flow) and reports NMS per yaw bucket. Writes
/// `per_image.csv`, `buckets.csv` and `table.txt` into `out`.
pub fn bench(cfg: &RunConfig, args: &BenchArgs) -> Result<BenchSummary> {
    let model = read_model(&args.model)?;
    let indices = read_index(&args.bench)?;
    let items = indices
        .iter()
        .map(|&i| load_item(&args.bench, i))
        .collect::<Result<Vec<_>, _>>()?;
    let mut templates: BTreeMap<(u32, u32), RenderedFace> = BTreeMap::new();
    for item in &items {
        let size = item.image.dimensions();
        if let std::collections::btree_map::Entry::Vacant(e) = templates.entry(size) {
            e.insert(render_target_template(&model, size)?);
        }
    }
    let predictor: Option<Predictor> = if cfg.bench.perfect {
        None
    } else {
        let path = args
            .weights
            .as_ref()
            .ok_or_else(|| CliError::Config("bench needs --weights unless bench.perfect = true".into()))?;
        let size = items[0].image.dimensions();
        Some(load_predictor(path, &templates[&size])?)
    };
    let images: Vec<ImageResult> = indices
        .par_iter()
        .zip(items.par_iter())
        .map(|(&index, item)| -> Result<ImageResult> {
            let yaw_deg = item
                .annotation
                .yaw
                .ok_or_else(|| CliError::Data(format!("benchmark item {index} has no yaw annotation")))?
                .to_degrees();
            let size = item.image.dimensions();
            let template = &templates[&size];
            let (flow, mask) = match &predictor {
                None => item
                    .gt
                    .clone()
                    .ok_or_else(|| CliError::Data(format!("benchmark item {index} has no ground-truth flow for perfect mode")))?,
                Some(p) => {
                    let pred = p.predict(&item.image)?;
                    (pred.flow, pred.matchability)
                }
            };
            let failed = |status: String| ImageResult {
                index,
                yaw_deg,
                nms: None,
                rms: f64::NAN,
                iterations: 0,
                converged: false,
                descent_violations: 0,
                status,
            };
            let fitted = match fit_image(cfg, &model, template, &flow, &mask) {
                Ok(f) => f,
                Err(e) => return Ok(failed(format!("fit failed: {e}").replace(',', ";"))),
            };
            let landmarks = landmarks_2d(&fitted.fit, &model, size)?;
            let (nms, status) = match nms(&landmarks, &item.annotation, cfg.bench.subset) {
                Ok(v) => (Some(v), "ok".to_string()),
                Err(e) => (None, format!("no score: {e}").replace(',', ";")),
            };
            Ok(ImageResult {
                index,
                yaw_deg,
                nms,
                rms: fitted.report.reprojection_rms,
                iterations: fitted.report.iteration_count,
                converged: fitted.report.converged,
                descent_violations: fitted.report.descent_violations(),
                status,
            })
        })
        .collect::<Result<_>>()?;
    let scored: Vec<&ImageResult> = images.iter().filter(|r| r.nms.is_some()).collect();
    if scored.is_empty() {
        return Err(CliError::Data("no benchmark image could be scored".into()));
    }
    let values: Vec<f64> = scored.iter().map(|r| r.nms.unwrap()).collect();
    let yaws: Vec<f64> = scored.iter().map(|r| r.yaw_deg).collect();
    let result = bucket_by_yaw(&values, &yaws)?;
    let summary = BenchSummary {
        failed: images.len() - scored.len(),
        result,
        images,
    };
    create_dir(&args.out)?;
    io_at(&args.out, fs::write(args.out.join("per_image.csv"), summary.per_image_csv()))?;
    io_at(&args.out, fs::write(args.out.join("buckets.csv"), summary.result.to_csv()))?;
    let mut table = summary.result.table();
    if summary.failed > 0 {
        let _ = writeln!(table, "unscored images: {}", summary.failed);
    }
    io_at(&args.out, fs::write(args.out.join("table.txt"), &table))?;
    cfg.write_snapshot(&snapshot_in_dir(&args.out))?;
    Ok(summary)
}
