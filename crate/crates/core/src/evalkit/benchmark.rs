//! On-disk benchmark sets: images with landmark annotations and, for synthetic
//! items, the ground-truth flow against the template.
//!
//! Layout: `<root>/items/NNNNNN/{image.png,landmarks.json[,gt.dcfl]}` plus
//! `<root>/index.txt` listing the item numbers, one per line.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;

use super::LandmarkAnnotation;
use crate::datagen::io::{load_flow, save_flow};
use crate::datagen::{FlowField, MatchabilityMask, PairMeta, SyntheticSet};
use crate::error::{Error, Result};
use crate::facemodel::MorphableModel;
use crate::fit::FitParameters;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkItem {
    pub image: RgbImage,
    pub annotation: LandmarkAnnotation,
    /// Ground-truth flow and mask against the template, when known.
    pub gt: Option<(FlowField, MatchabilityMask)>,
}

pub fn item_dir(root: &Path, index: usize) -> PathBuf {
    root.join("items").join(format!("{index:06}"))
}

pub fn save_item(root: &Path, index: usize, item: &BenchmarkItem) -> Result<()> {
    let dir = item_dir(root, index);
    fs::create_dir_all(&dir)?;
    item.image.save(dir.join("image.png"))?;
    item.annotation.save(&dir.join("landmarks.json"))?;
    if let Some((flow, mask)) = &item.gt {
        save_flow(flow, mask, &dir.join("gt.dcfl"))?;
    }
    Ok(())
}

pub fn load_item(root: &Path, index: usize) -> Result<BenchmarkItem> {
    let dir = item_dir(root, index);
    let image = image::open(dir.join("image.png"))?.to_rgb8();
    let annotation = LandmarkAnnotation::load(&dir.join("landmarks.json"))?;
    let gt_path = dir.join("gt.dcfl");
    let gt = if gt_path.exists() { Some(load_flow(&gt_path)?) } else { None };
    Ok(BenchmarkItem { image, annotation, gt })
}

pub fn write_index(root: &Path, indices: &[usize]) -> Result<()> {
    let text: String = indices.iter().map(|i| format!("{i:06}\n")).collect();
    fs::write(root.join("index.txt"), text)?;
    Ok(())
}

/// Reads `index.txt`; a missing or empty index is a data error.
pub fn read_index(root: &Path) -> Result<Vec<usize>> {
    let path = root.join("index.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::Data(format!("cannot read benchmark index {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(line.parse().map_err(|_| Error::format("benchmark index", format!("line {}: {line:?}", n + 1)))?);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("benchmark {} lists no items", root.display())));
    }
    Ok(out)
}

/// Item `index` of a synthetic set whose target is the template: the rendered
/// source, its landmark ground truth and the exact flow.
pub fn synthetic_item(set: &SyntheticSet<'_>, model: &MorphableModel, index: u64) -> Result<(BenchmarkItem, FitParameters)> {
    let (pair, render) = set.pair_with_render(index)?;
    let truth = match &pair.meta {
        PairMeta::Synthetic { source, .. } => FitParameters::new(source.pose.clone(), source.coeffs.clone()),
        PairMeta::Imported { .. } => return Err(Error::Data("synthetic set produced an imported pair".into())),
    };
    let annotation = LandmarkAnnotation::from_render(&truth, model, &render)?;
    let item = BenchmarkItem {
        image: pair.source,
        annotation,
        gt: Some((pair.gt_flow, pair.gt_mask)),
    };
    Ok((item, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Stage;
    use crate::facemodel::procedural::{generate, ProceduralConfig};
    use crate::raster::DataGenConfig;

    #[test]
    fn items_round_trip_and_empty_index_is_rejected() {
        let model = generate(&ProceduralConfig::default()).unwrap();
        let cfg = DataGenConfig {
            image_size: 32,
            ..Default::default()
        };
        let set = crate::datagen::build_synthetic_set(&model, &cfg, Stage::Finetune, &[]).unwrap();
        let (item, truth) = synthetic_item(&set, &model, 3).unwrap();
        assert_eq!(item.annotation.yaw, Some(truth.euler().yaw));
        let dir = tempfile::tempdir().unwrap();
        save_item(dir.path(), 3, &item).unwrap();
        assert_eq!(load_item(dir.path(), 3).unwrap(), item);
        assert!(matches!(read_index(dir.path()), Err(Error::Data(_))));
        write_index(dir.path(), &[]).unwrap();
        assert!(matches!(read_index(dir.path()), Err(Error::Data(_))));
        write_index(dir.path(), &[3]).unwrap();
        assert_eq!(read_index(dir.path()).unwrap(), vec![3]);
    }
}
