use std::path::PathBuf;

use densecorr_core::datagen::build_synthetic_set;
use densecorr_core::viz::flow_to_image;
use image::{GrayImage, Luma};

use super::{create_dir, read_backgrounds, read_model};
use crate::config::{snapshot_in_dir, RunConfig};
use crate::error::Result;

pub struct RenderArgs {
    pub model: PathBuf,
    pub index: u64,
    pub out: PathBuf,
}

/// Debug renders of pair `index` of the configured synthetic set: source,
/// target, template, colorized ground-truth flow and the matchability mask.
pub fn render(cfg: &RunConfig, args: &RenderArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let backgrounds = read_backgrounds(cfg)?;
    let set = build_synthetic_set(&model, &cfg.data.scene, cfg.data.stage, &backgrounds)?;
    let pair = set.pair(args.index)?;
    create_dir(&args.out)?;
    let save = |img: &image::RgbImage, name: &str| -> Result<()> {
        img.save(args.out.join(name)).map_err(densecorr_core::Error::from)?;
        Ok(())
    };
    save(&pair.source, "source.png")?;
    save(&pair.target, "target.png")?;
    save(&set.template().color, "template.png")?;
    save(&flow_to_image(&pair.gt_flow, &pair.gt_mask, 0.5, None), "flow.png")?;
    let (w, h) = pair.size();
    let mask = GrayImage::from_fn(w, h, |x, y| Luma([(255.0 * pair.gt_mask.get(x, y)).round() as u8]));
    mask.save(args.out.join("mask.png")).map_err(densecorr_core::Error::from)?;
    cfg.write_snapshot(&snapshot_in_dir(&args.out))?;
    Ok(())
}
