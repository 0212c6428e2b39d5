//! Quantitative evaluation: landmark NMS, yaw bucketing and flow endpoint error.
//!
//! NMS is the mean Euclidean landmark error divided by `sqrt(w * h)` of the
//! ground-truth face box, in percent. The visible-inner protocol drops contour
//! landmarks and landmarks the ground truth marks as hidden.

pub mod benchmark;
mod bucket;
mod flow;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facemodel::{is_contour_landmark, rotation_to_euler, MorphableModel};
use crate::fit::{landmarks_2d, FitParameters, Landmark2D};
use crate::raster::RenderedFace;

pub use bucket::{bucket_by_yaw, EvalResult, YAW_BUCKETS};
pub use flow::{flow_epe, FlowMetrics};

/// Which landmarks enter the error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkSubset {
    All,
    VisibleInner,
}

impl std::str::FromStr for LandmarkSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(LandmarkSubset::All),
            "visible_inner" => Ok(LandmarkSubset::VisibleInner),
            other => Err(Error::Config(format!("unknown landmark subset '{other}' (expected all | visible_inner)"))),
        }
    }
}

/// Ground truth for one image. On disk each landmark is `name: [x, y, visible]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkAnnotation {
    pub landmarks: BTreeMap<String, (f64, f64, bool)>,
    /// Face box `[x, y, width, height]` in pixels.
    pub bbox: [f64; 4],
    /// Ground-truth yaw in radians, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw: Option<f64>,
}

impl LandmarkAnnotation {
    pub fn validate(&self) -> Result<()> {
        if !(self.bbox.iter().all(|v| v.is_finite()) && self.bbox[2] > 0.0 && self.bbox[3] > 0.0) {
            return Err(Error::InvalidInput(format!("bounding box {:?} must be finite with positive area", self.bbox)));
        }
        if let Some((name, _)) = self.landmarks.iter().find(|(_, p)| !(p.0.is_finite() && p.1.is_finite())) {
            return Err(Error::InvalidInput(format!("landmark '{name}' is not finite")));
        }
        if self.yaw.is_some_and(|y| !y.is_finite()) {
            return Err(Error::InvalidInput("yaw must be finite".into()));
        }
        Ok(())
    }

    /// `sqrt(w * h)` of the face box.
    pub fn normalizer(&self) -> f64 {
        (self.bbox[2] * self.bbox[3]).sqrt()
    }

    /// Ground truth for a synthetic render: landmark projections and depth-test
    /// visibility under the true parameters, the tight box of the face mask
    /// (pixel centers, so a one-pixel face has a 1x1 box) and the true yaw.
    pub fn from_render(fit: &FitParameters, model: &MorphableModel, render: &RenderedFace) -> Result<Self> {
        let (w, h) = render.size();
        let mut bounds = [u32::MAX, u32::MAX, 0, 0];
        for y in 0..h {
            for x in 0..w {
                if render.face_mask[render.index(x, y)] {
                    bounds = [bounds[0].min(x), bounds[1].min(y), bounds[2].max(x), bounds[3].max(y)];
                }
            }
        }
        if bounds[0] == u32::MAX {
            return Err(Error::Data("render has an empty face mask".into()));
        }
        let landmarks = landmarks_2d(fit, model, (w, h))?
            .into_iter()
            .map(|l| (l.name, (l.position[0], l.position[1], l.visible)))
            .collect();
        let ann = LandmarkAnnotation {
            landmarks,
            bbox: [
                bounds[0] as f64 - 0.5,
                bounds[1] as f64 - 0.5,
                (bounds[2] - bounds[0] + 1) as f64,
                (bounds[3] - bounds[1] + 1) as f64,
            ],
            yaw: Some(rotation_to_euler(&fit.pose.rotation).yaw),
        };
        ann.validate()?;
        Ok(ann)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ann: LandmarkAnnotation = serde_json::from_str(text)?;
        ann.validate()?;
        Ok(ann)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Names entering the error under `subset`, in sorted order.
    pub fn selected(&self, subset: LandmarkSubset) -> Vec<&str> {
        self.landmarks
            .iter()
            .filter(|(name, p)| match subset {
                LandmarkSubset::All => true,
                LandmarkSubset::VisibleInner => p.2 && !is_contour_landmark(name),
            })
            .map(|(name, _)| name.as_str())
            .collect()
    }
}

/// Normalized mean error in percent of `sqrt(box_w * box_h)`.
pub fn nms(pred: &[Landmark2D], gt: &LandmarkAnnotation, subset: LandmarkSubset) -> Result<f64> {
    gt.validate()?;
    let names = gt.selected(subset);
    if names.is_empty() {
        return Err(Error::InvalidInput(format!("no landmarks selected by subset {subset:?}")));
    }
    let by_name: BTreeMap<&str, &Landmark2D> = pred.iter().map(|l| (l.name.as_str(), l)).collect();
    let missing: Vec<&str> = names.iter().copied().filter(|n| !by_name.contains_key(n)).collect();
    if !missing.is_empty() {
        return Err(Error::InvalidInput(format!("prediction lacks landmarks: {}", missing.join(", "))));
    }
    let total: f64 = names
        .iter()
        .map(|n| {
            let p = by_name[n].position;
            let g = gt.landmarks[*n];
            (p[0] - g.0).hypot(p[1] - g.1)
        })
        .sum();
    let err = total / names.len() as f64;
    if !err.is_finite() {
        return Err(Error::Numerical("landmark error is not finite (landmark behind the camera?)".into()));
    }
    Ok(100.0 * err / gt.normalizer())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn annotation(points: &[(&str, f64, f64, bool)], bbox: [f64; 4]) -> LandmarkAnnotation {
        LandmarkAnnotation {
            landmarks: points.iter().map(|&(n, x, y, v)| (n.to_string(), (x, y, v))).collect(),
            bbox,
            yaw: None,
        }
    }

    fn as_pred(ann: &LandmarkAnnotation) -> Vec<Landmark2D> {
        ann.landmarks
            .iter()
            .map(|(n, p)| Landmark2D {
                name: n.clone(),
                position: [p.0, p.1],
                visible: p.2,
            })
            .collect()
    }

    #[test]
    fn perfect_prediction_scores_zero() {
        let gt = annotation(&[("nose_tip", 10.0, 12.0, true), ("chin", 10.0, 30.0, true)], [0.0, 0.0, 40.0, 40.0]);
        assert_eq!(nms(&as_pred(&gt), &gt, LandmarkSubset::All).unwrap(), 0.0);
    }

    #[test]
    fn tenth_of_the_normalizer_is_ten_percent() {
        let gt = annotation(&[("nose_tip", 10.0, 12.0, true)], [0.0, 0.0, 40.0, 90.0]);
        let mut pred = as_pred(&gt);
        let d = (40.0f64 * 90.0).sqrt() / 10.0;
        pred[0].position = [10.0 + d * 0.6, 12.0 - d * 0.8];
        assert!((nms(&pred, &gt, LandmarkSubset::All).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn visible_inner_drops_contour_and_hidden_points() {
        let gt = annotation(
            &[("nose_tip", 10.0, 10.0, true), ("chin", 10.0, 30.0, true), ("left_eye_outer", 20.0, 8.0, false)],
            [0.0, 0.0, 10.0, 10.0],
        );
        assert_eq!(gt.selected(LandmarkSubset::VisibleInner), vec!["nose_tip"]);
        let mut pred = as_pred(&gt);
        for p in &mut pred {
            if p.name != "nose_tip" {
                p.position[0] += 50.0;
            }
        }
        assert_eq!(nms(&pred, &gt, LandmarkSubset::VisibleInner).unwrap(), 0.0);
        assert!(nms(&pred, &gt, LandmarkSubset::All).unwrap() > 0.0);
    }

    #[test]
    fn empty_subset_and_missing_names_are_errors() {
        let gt = annotation(&[("chin", 10.0, 30.0, true)], [0.0, 0.0, 10.0, 10.0]);
        assert!(nms(&as_pred(&gt), &gt, LandmarkSubset::VisibleInner).is_err());
        let gt = annotation(&[("nose_tip", 1.0, 1.0, true), ("mouth_left", 2.0, 2.0, true)], [0.0, 0.0, 10.0, 10.0]);
        let err = nms(&as_pred(&gt)[..1], &gt, LandmarkSubset::All).unwrap_err().to_string();
        assert!(err.contains("nose_tip"), "{err}");
        let bad_box = annotation(&[("nose_tip", 1.0, 1.0, true)], [0.0, 0.0, 0.0, 10.0]);
        assert!(nms(&as_pred(&bad_box), &bad_box, LandmarkSubset::All).is_err());
    }

    #[test]
    fn json_round_trip_uses_triples() {
        let mut gt = annotation(&[("nose_tip", 1.5, 2.25, true)], [0.0, 1.0, 10.0, 12.0]);
        gt.yaw = Some(0.3);
        let text = gt.to_json().unwrap();
        assert!(text.replace(char::is_whitespace, "").contains("\"nose_tip\":[1.5,2.25,true]"));
        assert_eq!(LandmarkAnnotation::from_json(&text).unwrap(), gt);
        assert!(LandmarkAnnotation::from_json(&text.replace("bbox", "box")).is_err());
    }

    #[test]
    fn subset_parses_from_text() {
        assert_eq!("all".parse::<LandmarkSubset>().unwrap(), LandmarkSubset::All);
        assert_eq!("visible_inner".parse::<LandmarkSubset>().unwrap(), LandmarkSubset::VisibleInner);
        assert!("inner".parse::<LandmarkSubset>().is_err());
    }

    fn points() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
        prop::collection::vec((0.0..100.0f64, 0.0..100.0f64, -5.0..5.0f64, -5.0..5.0f64), 1..12)
    }

    proptest! {
        #[test]
        fn nms_is_scale_invariant(pts in points(), s in 0.1..10.0f64, bw in 5.0..80.0f64, bh in 5.0..80.0f64) {
            let build = |k: f64| {
                let names: Vec<String> = (0..pts.len()).map(|i| format!("p{i}")).collect();
                let gt = LandmarkAnnotation {
                    landmarks: names.iter().zip(&pts).map(|(n, p)| (n.clone(), (k * p.0, k * p.1, true))).collect(),
                    bbox: [3.0 * k, 4.0 * k, bw * k, bh * k],
                    yaw: None,
                };
                let pred: Vec<Landmark2D> = names.iter().zip(&pts).map(|(n, p)| Landmark2D {
                    name: n.clone(),
                    position: [k * (p.0 + p.2), k * (p.1 + p.3)],
                    visible: true,
                }).collect();
                nms(&pred, &gt, LandmarkSubset::All).unwrap()
            };
            let (a, b) = (build(1.0), build(s));
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn nms_ignores_prediction_order(pts in points(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let gt = LandmarkAnnotation {
                landmarks: pts.iter().enumerate().map(|(i, p)| (format!("p{i}"), (p.0, p.1, true))).collect(),
                bbox: [0.0, 0.0, 50.0, 60.0],
                yaw: None,
            };
            let mut pred: Vec<Landmark2D> = pts.iter().enumerate().map(|(i, p)| Landmark2D {
                name: format!("p{i}"),
                position: [p.0 + p.2, p.1 + p.3],
                visible: true,
            }).collect();
            let a = nms(&pred, &gt, LandmarkSubset::All).unwrap();
            pred.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let b = nms(&pred, &gt, LandmarkSubset::All).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
