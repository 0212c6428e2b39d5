//! Training pairs: synthetic (both stages of the curriculum) and imported fits.

use image::{Rgb, RgbImage};
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compute_gt_with_index, FlowField, MatchabilityMask, UvIndex};
use crate::error::{Error, Result};
use crate::facemodel::{synthesize_shape, MorphableModel, EVAL_LANDMARKS};
use crate::fit::FitParameters;
use crate::raster::{
    rasterize_attributes, rasterize_with_backgrounds, render_target_template, sample_scene, template_scene,
    DataGenConfig, RenderedFace, SceneContext, SceneSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Random source and random target.
    Pretrain,
    /// Random source, target fixed to the frontal mean-face template.
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PairMeta {
    Synthetic { source: SceneSpec, target: SceneSpec },
    Imported { tag: String, fit: FitParameters },
}

impl PairMeta {
    pub fn provenance(&self) -> &'static str {
        match self {
            PairMeta::Synthetic { .. } => "synthetic",
            PairMeta::Imported { .. } => "imported",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub source: RgbImage,
    pub target: RgbImage,
    pub gt_flow: FlowField,
    pub gt_mask: MatchabilityMask,
    pub meta: PairMeta,
}

impl TrainingPair {
    pub fn size(&self) -> (u32, u32) {
        self.source.dimensions()
    }
}

/// A reproducible synthetic pair stream. Pair `i` draws from ChaCha stream `i`
/// of the configured seed, so any subset can be generated independently and in
/// parallel with identical results.
pub struct SyntheticSet<'a> {
    model: &'a MorphableModel,
    config: DataGenConfig,
    stage: Stage,
    backgrounds: &'a [RgbImage],
    ctx: SceneContext<'a>,
    template: RenderedFace,
    template_index: UvIndex,
}

pub fn build_synthetic_set<'a>(
    model: &'a MorphableModel,
    config: &DataGenConfig,
    stage: Stage,
    backgrounds: &'a [RgbImage],
) -> Result<SyntheticSet<'a>> {
    config.validate()?;
    let size = (config.image_size, config.image_size);
    let template = render_target_template(model, size)?;
    Ok(SyntheticSet {
        model,
        config: config.clone(),
        stage,
        backgrounds,
        ctx: SceneContext::new(model, size, backgrounds)?,
        template_index: UvIndex::build(&template),
        template,
    })
}

impl<'a> SyntheticSet<'a> {
    pub fn template(&self) -> &RenderedFace {
        &self.template
    }

    pub fn pair_rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(index);
        rng
    }

    /// Scenes for pair `index` (source, target); the target is `None` when it is the template.
    pub fn scenes(&self, index: u64) -> Result<(SceneSpec, Option<SceneSpec>)> {
        let mut rng = self.pair_rng(index);
        let source = sample_scene(&mut rng, &self.config, &self.ctx)?;
        let target = match self.stage {
            Stage::Pretrain => Some(sample_scene(&mut rng, &self.config, &self.ctx)?),
            Stage::Finetune => None,
        };
        Ok((source, target))
    }

    fn render(&self, scene: &SceneSpec) -> Result<RenderedFace> {
        rasterize_with_backgrounds(self.model, scene, self.ctx.image_size, self.backgrounds)
    }

    /// Pair `index` together with its rendered source.
    pub fn pair_with_render(&self, index: u64) -> Result<(TrainingPair, RenderedFace)> {
        let inner = || -> Result<(TrainingPair, RenderedFace)> {
            let (source_scene, target_scene) = self.scenes(index)?;
            let source = self.render(&source_scene)?;
            let thr = self.config.uv_threshold;
            let (target_color, (flow, mask), target_scene) = match target_scene {
                Some(ts) => {
                    let target = self.render(&ts)?;
                    let index = UvIndex::build(&target);
                    let gt = compute_gt_with_index(&source, &target, &index, thr)?;
                    (target.color, gt, ts)
                }
                None => (
                    self.template.color.clone(),
                    compute_gt_with_index(&source, &self.template, &self.template_index, thr)?,
                    template_scene(self.model, self.ctx.image_size)?,
                ),
            };
            let pair = TrainingPair {
                source: source.color.clone(),
                target: target_color,
                gt_flow: flow,
                gt_mask: mask,
                meta: PairMeta::Synthetic {
                    source: source_scene,
                    target: target_scene,
                },
            };
            Ok((pair, source))
        };
        inner().map_err(|e| Error::Data(format!("pair {index}: {e}")))
    }

    pub fn pair(&self, index: u64) -> Result<TrainingPair> {
        self.pair_with_render(index).map(|(p, _)| p)
    }

    pub fn iter(&self, n_pairs: u64) -> impl Iterator<Item = Result<TrainingPair>> + '_ {
        (0..n_pairs).map(move |i| self.pair(i))
    }

    /// Pairs `start..start + n`, generated in parallel and returned in index order.
    pub fn generate(&self, start: u64, n: u64) -> Result<Vec<TrainingPair>> {
        (start..start + n).into_par_iter().map(|i| self.pair(i)).collect()
    }
}

/// Ground truth for a real photograph from an externally obtained fit.
pub fn import_fitted_image(
    image: &RgbImage,
    fit: &FitParameters,
    model: &MorphableModel,
    uv_threshold: f32,
    tag: &str,
) -> Result<TrainingPair> {
    fit.validate(model)?;
    let size = image.dimensions();
    let shape = synthesize_shape(model, &fit.coeffs)?;
    for name in EVAL_LANDMARKS {
        let Some(&vi) = model.landmark_indices.get(name) else {
            continue;
        };
        let p = fit
            .pose
            .project_point(&shape.vertices[vi as usize], size)
            .ok_or(Error::OutOfBounds { bound: "behind camera" })?;
        let bound = if p.x < 0.0 {
            Some("left")
        } else if p.x > size.0 as f64 - 1.0 {
            Some("right")
        } else if p.y < 0.0 {
            Some("top")
        } else if p.y > size.1 as f64 - 1.0 {
            Some("bottom")
        } else {
            None
        };
        if let Some(bound) = bound {
            return Err(Error::OutOfBounds { bound });
        }
    }
    let source = rasterize_attributes(model, &fit.coeffs, &fit.pose, size)?;
    let target = render_target_template(model, size)?;
    let (gt_flow, gt_mask) = super::compute_gt_correspondence(&source, &target, uv_threshold)?;
    Ok(TrainingPair {
        source: image.clone(),
        target: target.color,
        gt_flow,
        gt_mask,
        meta: PairMeta::Imported {
            tag: tag.to_string(),
            fit: fit.clone(),
        },
    })
}

/// Crop perturbation about the image center `c`: rotation and scale act as
/// `p' = c + scale * Rot(rotation) (p - c)`; the shift moves the center to `c + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropPerturbation {
    pub scale: f64,
    pub shift: [f64; 2],
    pub rotation: f64,
}

impl CropPerturbation {
    pub const IDENTITY: CropPerturbation = CropPerturbation {
        scale: 1.0,
        shift: [0.0, 0.0],
        rotation: 0.0,
    };

    /// Uniform draw: scale within ±10 %, shift within ±8 px, rotation within ±0.2 rad.
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        CropPerturbation {
            scale: rng.gen_range(0.9..=1.1),
            shift: [rng.gen_range(-8.0..=8.0), rng.gen_range(-8.0..=8.0)],
            rotation: rng.gen_range(-0.2..=0.2),
        }
    }

    /// Camera rotation realizing the perturbation: roll about the optical axis
    /// composed with the pan that carries the principal ray to the shifted center.
    fn camera_rotation(&self, focal: f64) -> Matrix3<f64> {
        let (s, c) = self.rotation.sin_cos();
        let rz = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        let f = focal * self.scale;
        let dir = rz.transpose() * Vector3::new(self.shift[0] / f, self.shift[1] / f, 1.0);
        let pan = Rotation3::rotation_between(&Vector3::z(), &dir).unwrap_or_else(Rotation3::identity);
        rz * pan.into_inner()
    }
}

fn bilinear(img: &RgbImage, x: f64, y: f64) -> Rgb<u8> {
    let (w, h) = img.dimensions();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as u32, y.floor() as u32);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let v = |xx, yy| img.get_pixel(xx, yy).0[c] as f64;
        let top = v(x0, y0) * (1.0 - fx) + v(x1, y0) * fx;
        let bot = v(x0, y1) * (1.0 - fx) + v(x1, y1) * fx;
        *o = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// Warps `image` by `p` and adjusts the fit so the model follows the warp.
///
/// The perturbation is realized as a camera rotation about its center plus a
/// focal change, so the image warp is the induced homography and the adjusted
/// fit is exact for every depth.
pub fn perturb_crop(image: &RgbImage, fit: &FitParameters, p: &CropPerturbation) -> Result<(RgbImage, FitParameters)> {
    if !(p.scale > 0.0 && p.scale.is_finite() && p.rotation.is_finite() && p.shift.iter().all(|s| s.is_finite())) {
        return Err(Error::InvalidInput(format!("invalid crop perturbation {p:?}")));
    }
    let (w, h) = image.dimensions();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let f = fit.pose.focal;
    let r = p.camera_rotation(f);
    let k = Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0);
    let k2 = Matrix3::new(f * p.scale, 0.0, cx, 0.0, f * p.scale, cy, 0.0, 0.0, 1.0);
    let hom = k2 * r * k.try_inverse().expect("intrinsics are invertible");
    let inv = hom.try_inverse().ok_or_else(|| Error::Numerical("singular crop homography".into()))?;
    let warped = RgbImage::from_fn(w, h, |x, y| {
        let q = inv * Vector3::new(x as f64, y as f64, 1.0);
        if q.z <= 0.0 {
            return Rgb([0, 0, 0]);
        }
        bilinear(image, q.x / q.z, q.y / q.z)
    });
    let mut pose = fit.pose;
    pose.rotation = r * pose.rotation;
    pose.translation = r * pose.translation;
    pose.focal *= p.scale;
    let pose = crate::facemodel::CameraPose::new(pose.focal, orthonormalize(&pose.rotation), pose.translation)?;
    Ok((warped, FitParameters::new(pose, fit.coeffs.clone())))
}

fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    Rotation3::from_matrix_eps(r, 1e-15, 16, Rotation3::identity()).into_inner()
}
