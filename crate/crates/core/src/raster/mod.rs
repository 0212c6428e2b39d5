//! Deterministic software rasterizer.
//!
//! Vertices are projected with the pinhole camera and snapped to a 1/256-pixel
//! fixed-point grid; coverage, culling and the top-left fill rule are then decided
//! with exact integer edge functions. Pixel `(x, y)` samples the image-plane point
//! `(x, y)`, so a projected point maps to its pixel by rounding.
//!
//! Every render carries uv / triangle+barycentric / depth buffers next to the
//! color image. Occluders only touch `color` and `occluder_mask`.

pub mod io;
mod scene;
pub mod sh;

use image::{Rgb, RgbImage};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::facemodel::{synthesize_shape, CameraPose, MorphableModel, ShapeCoefficients};

pub use scene::{
    framing_pose, render_target_template, sample_scene, template_scene, Background, BackgroundMode,
    DataGenConfig, Occluder, OccluderFill, SceneContext, SceneSpec, TextureSpec,
};
pub use sh::LightingSH;

/// Sub-pixel bits of the fixed-point vertex grid.
pub const SUBPIXEL_BITS: u32 = 8;
const SUBPIXEL_SCALE: f64 = (1u64 << SUBPIXEL_BITS) as f64;
/// Projections farther than this from the image are treated as unrenderable.
const MAX_SCREEN_COORD: f64 = 1.0e6;
pub const MIN_IMAGE_SIZE: u32 = 32;

/// Triangle index used for pixels not covered by the face.
pub const NO_TRIANGLE: u32 = u32::MAX;

/// Snaps an image-plane coordinate to the rasterizer's fixed-point grid.
pub fn snap(x: f64) -> i64 {
    (x * SUBPIXEL_SCALE).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelAttr {
    pub triangle: u32,
    /// Perspective-correct barycentric weights of the triangle's three vertices.
    pub bary: [f32; 3],
}

impl PixelAttr {
    pub const EMPTY: PixelAttr = PixelAttr {
        triangle: NO_TRIANGLE,
        bary: [0.0; 3],
    };

    pub fn is_valid(&self) -> bool {
        self.triangle != NO_TRIANGLE
    }

    /// Index (0..3) of the largest barycentric weight; ties go to the lowest slot.
    pub fn dominant_slot(&self) -> usize {
        let b = self.bary;
        if b[0] >= b[1] && b[0] >= b[2] {
            0
        } else if b[1] >= b[2] {
            1
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RenderReport {
    pub degenerate_triangles: usize,
    pub behind_camera_triangles: usize,
    pub backfacing_triangles: usize,
    /// Every vertex was behind the camera; the face mask is empty.
    pub all_behind_camera: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFace {
    pub width: u32,
    pub height: u32,
    pub color: RgbImage,
    /// Interpolated uv; `[0, 0]` where `face_mask` is false.
    pub uv: Vec<[f32; 2]>,
    pub attr: Vec<PixelAttr>,
    /// Camera-space z; `+inf` where `face_mask` is false.
    pub depth: Vec<f32>,
    pub face_mask: Vec<bool>,
    pub occluder_mask: Vec<bool>,
    pub report: RenderReport,
}

impl RenderedFace {
    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn index(&self, x: u32, y: u32) -> usize {
        (y * self.width + x) as usize
    }

    pub fn face_pixel_count(&self) -> usize {
        self.face_mask.iter().filter(|&&m| m).count()
    }

    /// Model vertex with the largest barycentric weight at pixel `i`.
    pub fn dominant_vertex(&self, model: &MorphableModel, i: usize) -> Option<u32> {
        let a = self.attr[i];
        if !a.is_valid() {
            return None;
        }
        Some(model.triangles[a.triangle as usize][a.dominant_slot()])
    }

    /// Shifts every buffer by an integer pixel offset; uncovered pixels become
    /// background (`fill`) with empty attributes.
    pub fn translated(&self, dx: i32, dy: i32, fill: [u8; 3]) -> RenderedFace {
        let (w, h) = (self.width as i32, self.height as i32);
        let n = (w * h) as usize;
        let mut out = RenderedFace {
            width: self.width,
            height: self.height,
            color: RgbImage::from_pixel(self.width, self.height, Rgb(fill)),
            uv: vec![[0.0; 2]; n],
            attr: vec![PixelAttr::EMPTY; n],
            depth: vec![f32::INFINITY; n],
            face_mask: vec![false; n],
            occluder_mask: vec![false; n],
            report: self.report.clone(),
        };
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = (x - dx, y - dy);
                if sx < 0 || sy < 0 || sx >= w || sy >= h {
                    continue;
                }
                let dst = (y * w + x) as usize;
                let src = (sy * w + sx) as usize;
                out.color.put_pixel(x as u32, y as u32, *self.color.get_pixel(sx as u32, sy as u32));
                out.uv[dst] = self.uv[src];
                out.attr[dst] = self.attr[src];
                out.depth[dst] = self.depth[src];
                out.face_mask[dst] = self.face_mask[src];
                out.occluder_mask[dst] = self.occluder_mask[src];
            }
        }
        out
    }
}

/// Screen-space triangle after snapping, oriented so that its doubled area is positive.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ScreenTriangle {
    /// Original vertex slot of each oriented corner.
    pub slots: [usize; 3],
    pub xy: [[i64; 2]; 3],
    pub area2: i64,
}

pub(crate) enum TriangleClass {
    Front(ScreenTriangle),
    Back,
    Degenerate,
    BehindCamera,
}

/// Classifies a triangle from its snapped corners. Front-facing triangles of an
/// outward-oriented mesh have negative doubled area in y-down image coordinates;
/// they are reordered to positive area.
pub(crate) fn classify(corners: [Option<[i64; 2]>; 3]) -> TriangleClass {
    let [Some(a), Some(b), Some(c)] = corners else {
        return TriangleClass::BehindCamera;
    };
    let area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    if area2 == 0 {
        TriangleClass::Degenerate
    } else if area2 > 0 {
        TriangleClass::Back
    } else {
        TriangleClass::Front(ScreenTriangle {
            slots: [0, 2, 1],
            xy: [a, c, b],
            area2: -area2,
        })
    }
}

/// Edge a->b owns its boundary pixels when it is a top or left edge of a
/// positive-area triangle in y-down coordinates.
fn owns_boundary(a: [i64; 2], b: [i64; 2]) -> bool {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    dy < 0 || (dy == 0 && dx > 0)
}

fn edge(a: [i64; 2], b: [i64; 2], p: [i64; 2]) -> i64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Geometry-only output of the rasterizer.
#[derive(Debug, Clone)]
pub struct GeometryBuffers {
    pub width: u32,
    pub height: u32,
    pub attr: Vec<PixelAttr>,
    pub depth: Vec<f32>,
    pub report: RenderReport,
    /// Camera-space vertex positions used for the render.
    pub camera_vertices: Vec<Vector3<f64>>,
}

/// Z-buffered coverage of a posed shape. Ties in depth keep the lower triangle index.
pub fn rasterize_geometry(
    model: &MorphableModel,
    coeffs: &ShapeCoefficients,
    pose: &CameraPose,
    image_size: (u32, u32),
) -> Result<GeometryBuffers> {
    let (w, h) = image_size;
    if w < MIN_IMAGE_SIZE || h < MIN_IMAGE_SIZE {
        return Err(Error::InvalidInput(format!(
            "image size {w}x{h} is below the {MIN_IMAGE_SIZE}x{MIN_IMAGE_SIZE} minimum"
        )));
    }
    pose.validate()?;
    let shape = synthesize_shape(model, coeffs)?;
    let camera_vertices: Vec<Vector3<f64>> = shape.vertices.iter().map(|v| pose.to_camera(v)).collect();
    let snapped: Vec<Option<[i64; 2]>> = camera_vertices
        .iter()
        .map(|p| {
            pose.project_camera_point(p, image_size).and_then(|s: Vector2<f64>| {
                (s.x.abs() < MAX_SCREEN_COORD && s.y.abs() < MAX_SCREEN_COORD).then(|| [snap(s.x), snap(s.y)])
            })
        })
        .collect();

    let n = (w * h) as usize;
    let mut attr = vec![PixelAttr::EMPTY; n];
    let mut depth = vec![f32::INFINITY; n];
    let mut zbuf = vec![f64::INFINITY; n];
    let mut report = RenderReport {
        all_behind_camera: camera_vertices.iter().all(|p| !(p.z > 0.0)),
        ..Default::default()
    };

    for (ti, tri) in model.triangles.iter().enumerate() {
        let corners = tri.map(|i| snapped[i as usize]);
        let st = match classify(corners) {
            TriangleClass::Front(st) => st,
            TriangleClass::Back => {
                report.backfacing_triangles += 1;
                continue;
            }
            TriangleClass::Degenerate => {
                report.degenerate_triangles += 1;
                continue;
            }
            TriangleClass::BehindCamera => {
                report.behind_camera_triangles += 1;
                continue;
            }
        };
        let [a, b, c] = st.xy;
        let inv_z = st.slots.map(|s| 1.0 / camera_vertices[tri[s] as usize].z);
        let one = 1i64 << SUBPIXEL_BITS;
        let min_x = a[0].min(b[0]).min(c[0]);
        let max_x = a[0].max(b[0]).max(c[0]);
        let min_y = a[1].min(b[1]).min(c[1]);
        let max_y = a[1].max(b[1]).max(c[1]);
        let x0 = min_x.div_euclid(one).max(0);
        let x1 = (max_x.div_euclid(one) + 1).min(w as i64 - 1);
        let y0 = min_y.div_euclid(one).max(0);
        let y1 = (max_y.div_euclid(one) + 1).min(h as i64 - 1);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let own = [owns_boundary(b, c), owns_boundary(c, a), owns_boundary(a, b)];
        let area = st.area2 as f64;
        for py in y0..=y1 {
            for px in x0..=x1 {
                let p = [px * one, py * one];
                let e = [edge(b, c, p), edge(c, a, p), edge(a, b, p)];
                if (0..3).any(|k| e[k] < 0 || (e[k] == 0 && !own[k])) {
                    continue;
                }
                let l = e.map(|v| v as f64 / area);
                let wsum = l[0] * inv_z[0] + l[1] * inv_z[1] + l[2] * inv_z[2];
                let z = 1.0 / wsum;
                let idx = (py as u32 * w + px as u32) as usize;
                if z < zbuf[idx] {
                    zbuf[idx] = z;
                    depth[idx] = z as f32;
                    let mut bary = [0.0f32; 3];
                    for k in 0..3 {
                        bary[st.slots[k]] = (l[k] * inv_z[k] / wsum) as f32;
                    }
                    attr[idx] = PixelAttr {
                        triangle: ti as u32,
                        bary,
                    };
                }
            }
        }
    }
    Ok(GeometryBuffers {
        width: w,
        height: h,
        attr,
        depth,
        report,
        camera_vertices,
    })
}

fn interpolate_uv(model: &MorphableModel, a: &PixelAttr) -> [f32; 2] {
    let t = model.triangles[a.triangle as usize];
    let mut uv = [0.0f64; 2];
    for k in 0..3 {
        let c = model.uv_coords[t[k] as usize];
        uv[0] += a.bary[k] as f64 * c[0];
        uv[1] += a.bary[k] as f64 * c[1];
    }
    [uv[0] as f32, uv[1] as f32]
}

/// Attribute-only render: uv/attr/depth/mask over a flat gray color image.
pub fn rasterize_attributes(
    model: &MorphableModel,
    coeffs: &ShapeCoefficients,
    pose: &CameraPose,
    image_size: (u32, u32),
) -> Result<RenderedFace> {
    let geo = rasterize_geometry(model, coeffs, pose, image_size)?;
    Ok(attributes_from_geometry(model, geo, RgbImage::from_pixel(image_size.0, image_size.1, Rgb([128; 3]))))
}

fn attributes_from_geometry(model: &MorphableModel, geo: GeometryBuffers, color: RgbImage) -> RenderedFace {
    let n = geo.attr.len();
    let uv = geo
        .attr
        .iter()
        .map(|a| if a.is_valid() { interpolate_uv(model, a) } else { [0.0; 2] })
        .collect();
    RenderedFace {
        width: geo.width,
        height: geo.height,
        color,
        uv,
        face_mask: geo.attr.iter().map(PixelAttr::is_valid).collect(),
        attr: geo.attr,
        depth: geo.depth,
        occluder_mask: vec![false; n],
        report: geo.report,
    }
}

/// Full render of a scene with the default gray-only background set.
pub fn rasterize(model: &MorphableModel, scene: &SceneSpec, image_size: (u32, u32)) -> Result<RenderedFace> {
    rasterize_with_backgrounds(model, scene, image_size, &[])
}

/// Full render of a scene; `backgrounds` supplies the images that
/// `Background::Image` indices refer to.
pub fn rasterize_with_backgrounds(
    model: &MorphableModel,
    scene: &SceneSpec,
    image_size: (u32, u32),
    backgrounds: &[RgbImage],
) -> Result<RenderedFace> {
    if !scene.lighting.is_finite() {
        return Err(Error::InvalidInput("lighting coefficients must be finite".into()));
    }
    let (w, h) = image_size;
    let geo = rasterize_geometry(model, &scene.coeffs, &scene.pose, image_size)?;

    let background = |x: u32, y: u32| -> Result<[u8; 3]> {
        Ok(match &scene.background {
            Background::Gray(g) => [*g; 3],
            Background::Image { index, offset } => {
                let img = backgrounds.get(*index).ok_or_else(|| {
                    Error::Config(format!("background index {index} out of {} images", backgrounds.len()))
                })?;
                let bx = (x + offset[0]) % img.width();
                let by = (y + offset[1]) % img.height();
                img.get_pixel(bx, by).0
            }
        })
    };

    let shape = synthesize_shape(model, &scene.coeffs)?;
    let normals: Vec<Vector3<f64>> = model
        .vertex_normals(&shape)
        .iter()
        .map(|n| scene.pose.rotation * n)
        .collect();
    let albedo = scene.texture.vertex_albedo(model, scene.rng_seed);

    let mut color = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let a = geo.attr[i];
            let rgb = if a.is_valid() {
                let t = model.triangles[a.triangle as usize];
                let mut n = Vector3::zeros();
                let mut alb = [0.0f64; 3];
                for k in 0..3 {
                    let b = a.bary[k] as f64;
                    n += normals[t[k] as usize] * b;
                    for ch in 0..3 {
                        alb[ch] += albedo[t[k] as usize][ch] as f64 * b;
                    }
                }
                let len = n.norm();
                if len > 0.0 {
                    n /= len;
                }
                let e = scene.lighting.irradiance(&n);
                let mut px = [0u8; 3];
                for ch in 0..3 {
                    px[ch] = ((alb[ch] * e[ch]).clamp(0.0, 1.0) * 255.0).round() as u8;
                }
                px
            } else {
                background(x, y)?
            };
            color.put_pixel(x, y, Rgb(rgb));
        }
    }

    let mut face = attributes_from_geometry(model, geo, color);
    for occ in &scene.occluders {
        let r = occ.clipped(w, h);
        for y in r[1]..r[3] {
            for x in r[0]..r[2] {
                let px = match occ.fill {
                    OccluderFill::Solid(c) => c,
                    OccluderFill::BackgroundCrop { dx, dy } => {
                        background((x as i64 + dx as i64).rem_euclid(w as i64) as u32, (y as i64 + dy as i64).rem_euclid(h as i64) as u32)?
                    }
                };
                face.color.put_pixel(x, y, Rgb(px));
                face.occluder_mask[(y * w + x) as usize] = true;
            }
        }
    }
    Ok(face)
}

/// Per-render RNG for texture noise, derived from the scene seed.
pub(crate) fn texture_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x7465_7874_7572_65)
}

pub(crate) fn gaussian_noise<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller keeps the stream layout independent of rand_distr internals.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::facemodel::EVAL_LANDMARKS;
    use nalgebra::{DMatrix, DVector};

    /// Minimal valid model around an explicit mesh, every landmark on vertex 0.
    pub fn mesh_model(vertices: &[[f64; 3]], uv: &[[f64; 2]], triangles: &[[u32; 3]]) -> MorphableModel {
        let v = vertices.len();
        MorphableModel {
            mean_shape: DVector::from_iterator(3 * v, vertices.iter().flatten().copied()),
            identity_basis: DMatrix::zeros(3 * v, 0),
            expression_basis: DMatrix::zeros(3 * v, 0),
            sigma_id: DVector::zeros(0),
            sigma_exp: DVector::zeros(0),
            triangles: triangles.to_vec(),
            uv_coords: uv.to_vec(),
            landmark_indices: EVAL_LANDMARKS.iter().map(|n| (n.to_string(), 0)).collect(),
        }
    }
}
