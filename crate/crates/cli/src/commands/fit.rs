use std::fs;
use std::path::{Path, PathBuf};

use densecorr_core::datagen::io::load_flow;
use densecorr_core::datagen::{FlowField, MatchabilityMask};
use densecorr_core::facemodel::MorphableModel;
use densecorr_core::fit::{fit_from_flow, landmarks_2d, recover_dense, FlowFit, Landmark2D};
use densecorr_core::raster::{render_target_template, RenderedFace};
use densecorr_core::viz::{draw_landmarks, flow_to_image, overlay_wireframe};
use densecorr_flownet::{Predictor, Weights};
use image::RgbImage;
use serde::Serialize;

use super::{create_dir, read_model};
use crate::config::{snapshot_in_dir, RunConfig};
use crate::error::{io_at, CliError, Result};

pub struct FitArgs {
    pub image: PathBuf,
    pub model: PathBuf,
    pub weights: Option<PathBuf>,
    /// Ground-truth flow file used instead of the network (`--no-network`).
    pub flow: Option<PathBuf>,
    pub out: PathBuf,
}

pub struct FitOutcome {
    pub fit: FlowFit,
    pub landmarks: Vec<Landmark2D>,
    pub prediction_ms: Option<f64>,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    report: &'a densecorr_core::fit::FitReport,
    correspondences: usize,
    dropped: usize,
    yaw_pitch_roll_deg: [f64; 3],
}

pub(crate) fn read_image(path: &Path) -> Result<RgbImage> {
    if !path.is_file() {
        return Err(CliError::Data(format!("image {} not found", path.display())));
    }
    Ok(image::open(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .to_rgb8())
}

pub(crate) fn load_predictor(path: &Path, template: &RenderedFace) -> Result<Predictor> {
    if !path.is_file() {
        return Err(CliError::Data(format!("weights file {} not found", path.display())));
    }
    Ok(Predictor::new(Weights::load(path)?, &template.color)?)
}

/// Flow from the network or from a file, with the prediction time when a network ran.
fn flow_for(args: &FitArgs, image: &RgbImage, template: &RenderedFace) -> Result<(FlowField, MatchabilityMask, Option<f64>)> {
    match (&args.flow, &args.weights) {
        (Some(path), _) => {
            if !path.is_file() {
                return Err(CliError::Data(format!("flow file {} not found", path.display())));
            }
            let (flow, mask) = load_flow(path)?;
            if (flow.width, flow.height) != image.dimensions() {
                return Err(CliError::Data(format!("flow is {}x{} but the image is {:?}", flow.width, flow.height, image.dimensions())));
            }
            Ok((flow, mask, None))
        }
        (None, Some(weights)) => {
            let p = load_predictor(weights, template)?.predict(image)?;
            Ok((p.flow, p.matchability, Some(p.elapsed_ms)))
        }
        (None, None) => Err(CliError::Config("fit needs --weights, or --no-network with --flow".into())),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(densecorr_core::Error::from)?;
    io_at(path, fs::write(path, text))
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(densecorr_core::Error::from)?;
    Ok(())
}

pub(crate) fn fit_image(cfg: &RunConfig, model: &MorphableModel, template: &RenderedFace, flow: &FlowField, mask: &MatchabilityMask) -> Result<FlowFit> {
    Ok(fit_from_flow(flow, mask, template, model, &cfg.fit)?)
}

/// Fits one image and writes `fit.json`, `report.json`, `landmarks.json`,
/// `overlay.png`, `flow.png` and `refined_flow.png` into `out`.
pub fn fit(cfg: &RunConfig, args: &FitArgs) -> Result<FitOutcome> {
    let model = read_model(&args.model)?;
    let image = read_image(&args.image)?;
    let template = render_target_template(&model, image.dimensions())?;
    let (flow, mask, prediction_ms) = flow_for(args, &image, &template)?;
    let result = fit_image(cfg, &model, &template, &flow, &mask)?;
    let landmarks = landmarks_2d(&result.fit, &model, image.dimensions())?;
    create_dir(&args.out)?;
    io_at(&args.out, fs::write(args.out.join("fit.json"), result.fit.to_json()?))?;
    let e = result.fit.euler();
    write_json(
        &args.out.join("report.json"),
        &ReportFile {
            report: &result.report,
            correspondences: result.correspondences.len(),
            dropped: result.dropped,
            yaw_pitch_roll_deg: [e.yaw.to_degrees(), e.pitch.to_degrees(), e.roll.to_degrees()],
        },
    )?;
    write_json(&args.out.join("landmarks.json"), &landmarks)?;
    let mut overlay = overlay_wireframe(&image, &result.fit, &model, [0, 255, 0])?;
    draw_landmarks(&mut overlay, &landmarks);
    save_png(&overlay, &args.out.join("overlay.png"))?;
    save_png(&flow_to_image(&flow, &mask, cfg.fit.match_threshold, None), &args.out.join("flow.png"))?;
    let (refined, refined_mask) = recover_dense(&result.fit, &model, &template, cfg.data.scene.uv_threshold)?;
    save_png(&flow_to_image(&refined, &refined_mask, 0.5, None), &args.out.join("refined_flow.png"))?;
    cfg.write_snapshot(&snapshot_in_dir(&args.out))?;
    Ok(FitOutcome {
        fit: result,
        landmarks,
        prediction_ms,
    })
}
