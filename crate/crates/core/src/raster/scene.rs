//! Scene description, sampling and the canonical target template.

use image::RgbImage;
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sh::{lighting_bank, LightingSH};
use super::{gaussian_noise, rasterize, texture_rng, RenderedFace};
use crate::error::{Error, Result};
use crate::facemodel::{euler_to_rotation, synthesize_shape, CameraPose, MorphableModel, ShapeCoefficients};

/// Fraction of the image height spanned by the frontal template face.
pub const TEMPLATE_FACE_FRACTION: f64 = 0.75;
pub const TEMPLATE_GRAY: u8 = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Background {
    Gray(u8),
    /// Pixel `(x, y)` reads image `index` at `(x + offset.0, y + offset.1)`, wrapping.
    Image { index: usize, offset: [u32; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OccluderFill {
    Solid([u8; 3]),
    /// Background pixels displaced by `(dx, dy)`, wrapping at the image border.
    BackgroundCrop { dx: i32, dy: i32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    /// `[x0, y0, x1, y1]`, half-open, in pixels; may extend past the image.
    pub rect: [i32; 4],
    pub fill: OccluderFill,
}

impl Occluder {
    pub fn clipped(&self, w: u32, h: u32) -> [u32; 4] {
        let c = |v: i32, hi: u32| v.clamp(0, hi as i32) as u32;
        let [x0, y0, x1, y1] = self.rect;
        let (x0, x1) = (c(x0, w), c(x1, w));
        let (y0, y1) = (c(y0, h), c(y1, h));
        [x0, y0, x1.max(x0), y1.max(y0)]
    }
}

/// Procedural skin texture: a tone gradient with painted eyes, brows and lips
/// placed from the model's landmark uv coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    pub skin: [f32; 3],
    pub lips: [f32; 3],
    pub brows: [f32; 3],
    pub eyes: [f32; 3],
    /// Std of per-vertex luminance noise, seeded by the scene seed.
    pub noise: f32,
}

impl Default for TextureSpec {
    fn default() -> Self {
        TextureSpec {
            skin: [0.85, 0.66, 0.55],
            lips: [0.68, 0.32, 0.33],
            brows: [0.32, 0.23, 0.18],
            eyes: [0.16, 0.13, 0.13],
            noise: 0.0,
        }
    }
}

fn landmark_uv(model: &MorphableModel, name: &str) -> [f64; 2] {
    model
        .landmark_indices
        .get(name)
        .map(|&i| model.uv_coords[i as usize])
        .unwrap_or([0.5, 0.5])
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p[0] - a[0] - t * d[0]).powi(2) + (p[1] - a[1] - t * d[1]).powi(2)).sqrt()
}

impl TextureSpec {
    pub fn vertex_albedo(&self, model: &MorphableModel, seed: u64) -> Vec<[f32; 3]> {
        let mut rng = texture_rng(seed);
        let mut features: Vec<([f64; 2], [f64; 2], f64, [f32; 3])> = Vec::new();
        for side in ["left", "right"] {
            let inner = landmark_uv(model, &format!("{side}_eye_inner"));
            let outer = landmark_uv(model, &format!("{side}_eye_outer"));
            features.push((inner, outer, 0.012, self.eyes));
            let b_in = landmark_uv(model, &format!("{side}_brow_inner"));
            let b_c = landmark_uv(model, &format!("{side}_brow_center"));
            let b_out = landmark_uv(model, &format!("{side}_brow_outer"));
            features.push((b_in, b_c, 0.01, self.brows));
            features.push((b_c, b_out, 0.01, self.brows));
        }
        let m_l = landmark_uv(model, "mouth_left");
        let m_r = landmark_uv(model, "mouth_right");
        features.push((m_l, m_r, 0.02, self.lips));

        model
            .uv_coords
            .iter()
            .map(|&uv| {
                let shade = 0.88 + 0.12 * uv[1];
                let mut c = self.skin.map(|s| s as f64 * shade);
                for (a, b, width, col) in &features {
                    let d = segment_distance(uv, *a, *b) / width;
                    let wgt = (-d * d).exp();
                    for k in 0..3 {
                        c[k] += wgt * (col[k] as f64 - c[k]);
                    }
                }
                let n = if self.noise > 0.0 {
                    self.noise as f64 * gaussian_noise(&mut rng)
                } else {
                    0.0
                };
                c.map(|x| (x + n).clamp(0.0, 1.0) as f32)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub coeffs: ShapeCoefficients,
    pub pose: CameraPose,
    pub texture: TextureSpec,
    pub lighting: LightingSH,
    pub background: Background,
    pub occluders: Vec<Occluder>,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundMode {
    Gray,
    Image,
}

/// Sampling ranges for synthetic scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataGenConfig {
    pub image_size: u32,
    pub count: usize,
    pub seed: u64,
    /// Std of yaw, pitch, roll in radians.
    pub pose_std: [f64; 3],
    /// Absolute bounds of yaw, pitch, roll; draws outside are redrawn.
    pub pose_bound: [f64; 3],
    /// Std of the image-plane offset of the face, pixels.
    pub jitter_px: f64,
    /// Std of the relative change of camera distance.
    pub depth_jitter: f64,
    /// Multiplier on the model sigmas when drawing shape coefficients.
    pub shape_std: f64,
    /// Std of the blend weight between flat light and a bank environment.
    pub light_std: f64,
    /// Std of the log irradiance scale.
    pub light_scale_std: f64,
    pub texture_std: f64,
    pub p_occ: f64,
    /// Occluder area as a fraction of the face bounding box.
    pub occluder_area: [f64; 2],
    pub background: BackgroundMode,
    pub background_dir: Option<String>,
    pub uv_threshold: f32,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        DataGenConfig {
            image_size: 64,
            count: 100,
            seed: 1,
            pose_std: [0.5, 0.2, 0.2],
            pose_bound: [1.4, 0.6, 0.6],
            jitter_px: 2.0,
            depth_jitter: 0.05,
            shape_std: 1.0,
            light_std: 0.7,
            light_scale_std: 0.15,
            texture_std: 0.06,
            p_occ: 0.3,
            occluder_area: [0.02, 0.2],
            background: BackgroundMode::Gray,
            background_dir: None,
            uv_threshold: 0.015,
        }
    }
}

impl DataGenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.image_size < super::MIN_IMAGE_SIZE {
            return bad("image_size must be at least 32");
        }
        let nonneg = [self.jitter_px, self.depth_jitter, self.shape_std, self.light_std, self.light_scale_std, self.texture_std];
        if nonneg.iter().chain(self.pose_std.iter()).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("standard deviations must be finite and non-negative");
        }
        if self.pose_bound.iter().any(|b| !(*b >= 0.0)) {
            return bad("pose bounds must be non-negative");
        }
        if self.pose_bound[1] >= std::f64::consts::FRAC_PI_2 {
            return bad("pitch bound must stay below pi/2");
        }
        if !(0.0..=1.0).contains(&self.p_occ) {
            return bad("p_occ must lie in [0, 1]");
        }
        let [lo, hi] = self.occluder_area;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("occluder_area must satisfy 0 < lo <= hi <= 1");
        }
        if self.depth_jitter >= 0.5 {
            return bad("depth_jitter must be below 0.5");
        }
        if !(self.uv_threshold > 0.0) {
            return bad("uv_threshold must be positive");
        }
        Ok(())
    }
}

/// Frontal camera with `f = W` placing the mean face centered and spanning
/// `fraction` of the image height.
pub fn framing_pose(model: &MorphableModel, image_size: (u32, u32), fraction: f64) -> Result<CameraPose> {
    let verts: Vec<Vector3<f64>> = (0..model.vertex_count()).map(|i| model.mean_vertex(i)).collect();
    let f = image_size.0 as f64;
    let target = fraction * image_size.1 as f64;
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    let mut zmin = f64::MAX;
    for v in &verts {
        xmin = xmin.min(v.x);
        xmax = xmax.max(v.x);
        ymin = ymin.min(v.y);
        ymax = ymax.max(v.y);
        zmin = zmin.min(v.z);
    }
    let mut t = Vector3::new(-(xmin + xmax) / 2.0, -(ymin + ymax) / 2.0, 0.0);
    let extent = |t: &Vector3<f64>| {
        let (mut lo, mut hi) = (f64::MAX, f64::MIN);
        let (mut xl, mut xh) = (f64::MAX, f64::MIN);
        for v in &verts {
            let p = v + t;
            let (x, y) = (f * p.x / p.z, f * p.y / p.z);
            lo = lo.min(y);
            hi = hi.max(y);
            xl = xl.min(x);
            xh = xh.max(x);
        }
        (hi - lo, (hi + lo) / 2.0, (xh + xl) / 2.0)
    };
    // projected height decreases monotonically with distance
    let mut near = -zmin + 1e-3;
    let mut far = near + 1e4;
    for _ in 0..200 {
        let mid = 0.5 * (near + far);
        t.z = mid;
        if extent(&t).0 > target {
            near = mid;
        } else {
            far = mid;
        }
    }
    t.z = 0.5 * (near + far);
    for _ in 0..20 {
        let (_, cy, cx) = extent(&t);
        t.y -= cy * t.z / f;
        t.x -= cx * t.z / f;
    }
    CameraPose::new(f, Matrix3::identity(), t)
}

/// The canonical frontal mean-face scene: flat light, gray background, no occluders.
pub fn template_scene(model: &MorphableModel, image_size: (u32, u32)) -> Result<SceneSpec> {
    Ok(SceneSpec {
        coeffs: model.zero_coefficients(),
        pose: framing_pose(model, image_size, TEMPLATE_FACE_FRACTION)?,
        texture: TextureSpec::default(),
        lighting: LightingSH::flat(),
        background: Background::Gray(TEMPLATE_GRAY),
        occluders: Vec::new(),
        rng_seed: 0,
    })
}

/// Renders the fixed target image `I_t`. Pure, so callers may cache the result.
pub fn render_target_template(model: &MorphableModel, image_size: (u32, u32)) -> Result<RenderedFace> {
    rasterize(model, &template_scene(model, image_size)?, image_size)
}

/// Everything `sample_scene` needs besides the RNG and the config.
#[derive(Debug, Clone)]
pub struct SceneContext<'a> {
    pub model: &'a MorphableModel,
    pub image_size: (u32, u32),
    pub template_pose: CameraPose,
    pub lighting_bank: Vec<LightingSH>,
    pub n_backgrounds: usize,
}

impl<'a> SceneContext<'a> {
    pub fn new(model: &'a MorphableModel, image_size: (u32, u32), backgrounds: &[RgbImage]) -> Result<Self> {
        Ok(SceneContext {
            model,
            image_size,
            template_pose: framing_pose(model, image_size, TEMPLATE_FACE_FRACTION)?,
            lighting_bank: lighting_bank(),
            n_backgrounds: backgrounds.len(),
        })
    }
}

fn truncated_normal<R: Rng>(rng: &mut R, std: f64, bound: f64) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    for _ in 0..1000 {
        let v = std * gaussian_noise(rng);
        if v.abs() <= bound {
            return v;
        }
    }
    0.0
}

/// Draws a random scene. Every draw is consumed in a fixed order so the stream is
/// reproducible regardless of which options are active.
pub fn sample_scene<R: Rng>(rng: &mut R, config: &DataGenConfig, ctx: &SceneContext) -> Result<SceneSpec> {
    config.validate()?;
    if config.background == BackgroundMode::Image && ctx.n_backgrounds == 0 {
        return Err(Error::Config(
            "image backgrounds requested but the background directory is empty".into(),
        ));
    }
    let model = ctx.model;
    let mut coeffs = model.zero_coefficients();
    for (a, s) in coeffs.alpha_id.iter_mut().zip(model.sigma_id.iter()) {
        *a = config.shape_std * s * gaussian_noise(rng);
    }
    for (a, s) in coeffs.alpha_exp.iter_mut().zip(model.sigma_exp.iter()) {
        *a = config.shape_std * s * gaussian_noise(rng);
    }

    let yaw = truncated_normal(rng, config.pose_std[0], config.pose_bound[0]);
    let pitch = truncated_normal(rng, config.pose_std[1], config.pose_bound[1]);
    let roll = truncated_normal(rng, config.pose_std[2], config.pose_bound[2]);
    let base = ctx.template_pose;
    let depth_scale = (1.0 + config.depth_jitter * gaussian_noise(rng)).clamp(0.5, 1.5);
    let jx = config.jitter_px * gaussian_noise(rng);
    let jy = config.jitter_px * gaussian_noise(rng);
    let mut t = base.translation;
    // rotate about the face center, which sits on the optical axis at the template depth
    let rotation = euler_to_rotation(yaw, pitch, roll);
    let center = Vector3::new(0.0, 0.0, base.translation.z);
    t = center + rotation * (t - center);
    t.z *= depth_scale;
    t.x += jx * t.z / base.focal;
    t.y += jy * t.z / base.focal;
    let pose = CameraPose::new(base.focal, rotation, t)?;

    let bank_index = rng.gen_range(0..ctx.lighting_bank.len());
    let mix = (config.light_std * gaussian_noise(rng)).abs().min(1.5);
    let scale = (config.light_scale_std * gaussian_noise(rng)).exp();
    let lighting = LightingSH::flat().lerp(&ctx.lighting_bank[bank_index], mix).scaled(scale);

    let mut texture = TextureSpec::default();
    for c in [&mut texture.skin, &mut texture.lips, &mut texture.brows, &mut texture.eyes] {
        let tone = config.texture_std * gaussian_noise(rng);
        for ch in c.iter_mut() {
            let tint = 0.3 * config.texture_std * gaussian_noise(rng);
            *ch = (*ch as f64 + tone + tint).clamp(0.02, 1.0) as f32;
        }
    }
    texture.noise = (0.3 * config.texture_std) as f32;

    let background_roll: usize = rng.gen_range(0..ctx.n_backgrounds.max(1));
    let offset = [rng.gen_range(0..4096u32), rng.gen_range(0..4096u32)];
    let background = match config.background {
        BackgroundMode::Gray => Background::Gray(TEMPLATE_GRAY),
        BackgroundMode::Image => Background::Image {
            index: background_roll,
            offset,
        },
    };

    let (w, h) = ctx.image_size;
    let mut occluders = Vec::new();
    let occlude = rng.gen::<f64>() < config.p_occ;
    let n_occ = rng.gen_range(1..=2);
    if occlude {
        let shape = synthesize_shape(model, &coeffs)?;
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for v in &shape.vertices {
            if let Some(p) = pose.project_point(v, ctx.image_size) {
                x0 = x0.min(p.x);
                y0 = y0.min(p.y);
                x1 = x1.max(p.x);
                y1 = y1.max(p.y);
            }
        }
        let (x0, y0) = (x0.max(0.0), y0.max(0.0));
        let (x1, y1) = (x1.min(w as f64), y1.min(h as f64));
        let box_area = ((x1 - x0) * (y1 - y0)).max(1.0);
        for _ in 0..n_occ {
            let frac = rng.gen_range(config.occluder_area[0]..=config.occluder_area[1]);
            let aspect: f64 = rng.gen_range(0.5f64..2.0);
            let area = frac * box_area;
            let rw = (area * aspect).sqrt();
            let rh = area / rw;
            let cx = rng.gen_range(x0..=x1.max(x0));
            let cy = rng.gen_range(y0..=y1.max(y0));
            let fill = if rng.gen::<bool>() {
                OccluderFill::Solid([rng.gen(), rng.gen(), rng.gen()])
            } else {
                OccluderFill::BackgroundCrop {
                    dx: rng.gen_range(-(w as i32)..w as i32),
                    dy: rng.gen_range(-(h as i32)..h as i32),
                }
            };
            let occ = Occluder {
                rect: [
                    (cx - rw / 2.0).round() as i32,
                    (cy - rh / 2.0).round() as i32,
                    (cx + rw / 2.0).round().max((cx - rw / 2.0).round() + 1.0) as i32,
                    (cy + rh / 2.0).round().max((cy - rh / 2.0).round() + 1.0) as i32,
                ],
                fill,
            };
            let c = occ.clipped(w, h);
            occluders.push(Occluder {
                rect: [c[0] as i32, c[1] as i32, c[2] as i32, c[3] as i32],
                fill: occ.fill,
            });
        }
    }

    let drawn_seed: u64 = rng.gen();
    let all_zero = config.texture_std == 0.0;
    Ok(SceneSpec {
        coeffs,
        pose,
        texture,
        lighting,
        background,
        occluders,
        rng_seed: if all_zero { 0 } else { drawn_seed },
    })
}
