//! Subcommand implementations. Each takes the resolved [`RunConfig`] plus the
//! paths given on the command line and writes its outputs and a config snapshot.

mod bench;
mod fit;
mod gendata;
mod genmodel;
mod render;
mod train;

use std::fs;
use std::path::Path;

use densecorr_core::facemodel::io::load_model;
use densecorr_core::facemodel::MorphableModel;
use densecorr_core::raster::BackgroundMode;
use image::RgbImage;

pub use bench::{bench, BenchArgs, BenchSummary};
pub use fit::{fit, FitArgs, FitOutcome};
pub use gendata::{gendata, GendataArgs};
pub use genmodel::genmodel;
pub use render::{render, RenderArgs};
pub use train::{train, TrainArgs};

use crate::config::RunConfig;
use crate::error::{io_at, CliError, Result};

pub(crate) fn read_model(path: &Path) -> Result<MorphableModel> {
    if !path.exists() {
        return Err(CliError::Data(format!("model file {} not found", path.display())));
    }
    Ok(load_model(path)?)
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    io_at(dir, fs::create_dir_all(dir))
}

/// PNG backgrounds from the configured directory, sorted by file name, when
/// image backgrounds are requested.
pub(crate) fn read_backgrounds(cfg: &RunConfig) -> Result<Vec<RgbImage>> {
    let scene = &cfg.data.scene;
    if scene.background != BackgroundMode::Image {
        return Ok(Vec::new());
    }
    let dir = scene
        .background_dir
        .as_deref()
        .ok_or_else(|| CliError::Config("image backgrounds need data.scene.background_dir".into()))?;
    let dir = Path::new(dir);
    let mut paths: Vec<_> = io_at(dir, fs::read_dir(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("no PNG backgrounds in {}", dir.display())));
    }
    let size = scene.image_size;
    paths
        .iter()
        .map(|p| {
            let img = image::open(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?.to_rgb8();
            Ok(image::imageops::resize(&img, size, size, image::imageops::FilterType::Triangle))
        })
        .collect()
}
