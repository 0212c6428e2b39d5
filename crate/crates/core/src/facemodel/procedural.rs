//! Procedural stand-in for a scanned morphable model.
//!
//! The mean face is an ellipsoidal shell (azimuth x elevation grid) with nose, brow,
//! eye-socket, lip and chin relief. Identity and expression columns are smooth
//! mixtures of Gaussian bumps in the (azimuth, elevation) parameter domain, made
//! orthogonal to the seven similarity modes of the mean shape (translation,
//! infinitesimal rotation, scale) and to each other, then normalised to unit norm.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MorphableModel;
use crate::error::{Error, Result};

const RADIUS_X: f64 = 0.78;
const RADIUS_Y: f64 = 1.0;
const RADIUS_Z: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProceduralConfig {
    pub seed: u64,
    /// Grid columns (odd keeps the mesh mirror-symmetric about the midline).
    pub n_azimuth: usize,
    pub n_elevation: usize,
    pub k_id: usize,
    pub k_exp: usize,
    /// Half-extent of the shell in azimuth, radians.
    pub azimuth_extent: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
    /// Typical peak vertex displacement of a one-sigma identity coefficient (model units).
    pub identity_scale: f64,
    pub expression_scale: f64,
}

impl Default for ProceduralConfig {
    fn default() -> Self {
        ProceduralConfig {
            seed: 7,
            n_azimuth: 41,
            n_elevation: 37,
            k_id: 16,
            k_exp: 8,
            azimuth_extent: 1.75,
            elevation_min: -1.1,
            elevation_max: 1.05,
            identity_scale: 0.08,
            expression_scale: 0.03,
        }
    }
}

fn bump(theta: f64, psi: f64, center: (f64, f64), width: (f64, f64)) -> f64 {
    let a = (theta - center.0) / width.0;
    let b = (psi - center.1) / width.1;
    (-(a * a + b * b)).exp()
}

/// Facial relief toward the camera (negative z) for the mean face.
fn relief(theta: f64, psi: f64) -> f64 {
    let mut h = 0.0;
    h += 0.24 * bump(theta, psi, (0.0, -0.1), (0.12, 0.15));
    h += 0.10 * bump(theta, psi, (0.0, 0.15), (0.09, 0.16));
    h += 0.05 * bump(theta, psi, (0.0, -0.47), (0.28, 0.08));
    h += 0.06 * bump(theta, psi, (0.0, -0.82), (0.25, 0.14));
    for side in [-1.0, 1.0] {
        h -= 0.08 * bump(theta, psi, (side * 0.38, 0.22), (0.17, 0.09));
        h += 0.05 * bump(theta, psi, (side * 0.38, 0.4), (0.24, 0.06));
    }
    h
}

fn surface_point(theta: f64, psi: f64) -> Vector3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    Vector3::new(
        RADIUS_X * st * cp,
        -RADIUS_Y * sp,
        -RADIUS_Z * ct * cp - relief(theta, psi),
    )
}

/// Landmark placement in the (azimuth, elevation) domain. Positive azimuth is the
/// subject's left (image right in the frontal view).
fn landmark_sites() -> Vec<(String, f64, f64)> {
    let mut sites = Vec::new();
    let mut both = |name: &str, theta: f64, psi: f64| {
        sites.push((format!("left_{name}"), theta, psi));
        sites.push((format!("right_{name}"), -theta, psi));
    };
    both("brow_outer", 0.62, 0.42);
    both("brow_center", 0.38, 0.45);
    both("brow_inner", 0.14, 0.41);
    both("eye_outer", 0.55, 0.22);
    both("eye_center", 0.38, 0.22);
    both("eye_inner", 0.2, 0.22);
    both("ear", 1.55, 0.1);
    sites.push(("nose_left".into(), 0.12, -0.15));
    sites.push(("nose_tip".into(), 0.0, -0.1));
    sites.push(("nose_right".into(), -0.12, -0.15));
    sites.push(("mouth_left".into(), 0.26, -0.47));
    sites.push(("mouth_center".into(), 0.0, -0.47));
    sites.push(("mouth_right".into(), -0.26, -0.47));
    sites.push(("chin".into(), 0.0, -0.9));
    for i in 0..17 {
        let s = (i as f64 - 8.0) / 8.0;
        let theta = 1.45 * s;
        sites.push((format!("contour_{i:02}"), theta, -0.9 + 0.95 * s * s));
    }
    sites
}

/// Builds the procedural model. Deterministic in `config.seed`.
pub fn generate(config: &ProceduralConfig) -> Result<MorphableModel> {
    let (na, ne) = (config.n_azimuth, config.n_elevation);
    if na * ne < 3 {
        return Err(Error::Config(format!(
            "grid {na}x{ne} yields fewer than 3 vertices"
        )));
    }
    if na < 2 || ne < 2 {
        return Err(Error::Config(format!("grid {na}x{ne} has no triangles")));
    }
    if !(config.elevation_min < config.elevation_max)
        || config.elevation_min <= -std::f64::consts::FRAC_PI_2
        || config.elevation_max >= std::f64::consts::FRAC_PI_2
    {
        return Err(Error::Config("elevation range must lie inside (-pi/2, pi/2)".into()));
    }
    if !(config.azimuth_extent > 0.0 && config.azimuth_extent < std::f64::consts::PI) {
        return Err(Error::Config("azimuth extent must lie in (0, pi)".into()));
    }
    if !(config.identity_scale > 0.0 && config.expression_scale > 0.0) {
        return Err(Error::Config("basis scales must be positive".into()));
    }

    let theta_at = |i: usize| -config.azimuth_extent + 2.0 * config.azimuth_extent * i as f64 / (na - 1) as f64;
    let psi_at = |j: usize| {
        config.elevation_min + (config.elevation_max - config.elevation_min) * j as f64 / (ne - 1) as f64
    };
    let index = |i: usize, j: usize| (j * na + i) as u32;

    let v = na * ne;
    let mut params = Vec::with_capacity(v);
    let mut mean = DVector::zeros(3 * v);
    let mut uv = Vec::with_capacity(v);
    let (s_lo, s_hi) = (config.elevation_min.sin(), config.elevation_max.sin());
    for j in 0..ne {
        for i in 0..na {
            let (theta, psi) = (theta_at(i), psi_at(j));
            let p = surface_point(theta, psi);
            let k = index(i, j) as usize;
            mean.fixed_rows_mut::<3>(3 * k).copy_from(&p);
            params.push((theta, psi));
            // cylindrical unwrap: azimuth and height on the undeformed shell
            uv.push([
                (i as f64 / (na - 1) as f64).clamp(0.0, 1.0),
                ((psi.sin() - s_lo) / (s_hi - s_lo)).clamp(0.0, 1.0),
            ]);
        }
    }

    // Outward normals must equal (b - a) x (c - a). Increasing i moves toward +x,
    // increasing j moves toward -y (up); diagonals are mirrored across the midline.
    let mut triangles = Vec::with_capacity(2 * (na - 1) * (ne - 1));
    for j in 0..ne - 1 {
        for i in 0..na - 1 {
            let (a, b, c, d) = (index(i, j), index(i + 1, j), index(i, j + 1), index(i + 1, j + 1));
            let left_half = 2 * i + 1 < na - 1;
            if left_half {
                triangles.push([a, b, d]);
                triangles.push([a, d, c]);
            } else {
                triangles.push([a, b, c]);
                triangles.push([b, d, c]);
            }
        }
    }

    let nearest_vertex = |theta: f64, psi: f64| -> u32 {
        let mut best = (f64::INFINITY, 0u32);
        for (k, &(t, p)) in params.iter().enumerate() {
            let d = (t - theta).powi(2) + (p - psi).powi(2);
            if d < best.0 {
                best = (d, k as u32);
            }
        }
        best.1
    };
    let landmark_indices: BTreeMap<String, u32> = landmark_sites()
        .into_iter()
        .map(|(name, t, p)| (name, nearest_vertex(t, p)))
        .collect();

    let normals = {
        let mut n = vec![Vector3::zeros(); v];
        for t in &triangles {
            let [a, b, c] = t.map(|i| mean.fixed_rows::<3>(3 * i as usize).into_owned());
            let f = (b - a).cross(&(c - a));
            for &i in t {
                n[i as usize] += f;
            }
        }
        n.iter().map(|x| x.normalize()).collect::<Vec<_>>()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let modes = similarity_modes(&mean);
    let mut columns: Vec<DVector<f64>> = Vec::with_capacity(config.k_id + config.k_exp);
    let mut scales = Vec::with_capacity(config.k_id + config.k_exp);
    for k in 0..config.k_id + config.k_exp {
        let expression = k >= config.k_id;
        let mut col = random_bump_field(&mut rng, &params, &normals, expression);
        let mut attempts = 0;
        loop {
            for m in modes.iter().chain(columns.iter()) {
                let d = m.dot(&col);
                col.axpy(-d, m, 1.0);
            }
            let n = col.norm();
            if n > 1e-6 {
                col /= n;
                break;
            }
            attempts += 1;
            if attempts > 16 {
                return Err(Error::Config(format!(
                    "cannot build {} independent basis columns on a {}-vertex mesh",
                    config.k_id + config.k_exp,
                    v
                )));
            }
            col = random_bump_field(&mut rng, &params, &normals, expression);
        }
        let peak = col
            .as_slice()
            .chunks_exact(3)
            .map(|c| (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt())
            .fold(0.0, f64::max);
        let target = if expression { config.expression_scale } else { config.identity_scale };
        scales.push(target / peak);
        columns.push(col);
    }

    let identity_basis = DMatrix::from_fn(3 * v, config.k_id, |r, c| columns[c][r]);
    let expression_basis = DMatrix::from_fn(3 * v, config.k_exp, |r, c| columns[config.k_id + c][r]);
    let model = MorphableModel {
        mean_shape: mean,
        identity_basis,
        expression_basis,
        sigma_id: DVector::from_iterator(config.k_id, scales[..config.k_id].iter().copied()),
        sigma_exp: DVector::from_iterator(config.k_exp, scales[config.k_id..].iter().copied()),
        triangles,
        uv_coords: uv,
        landmark_indices,
    };
    model.validate()?;
    Ok(model)
}

/// A sum of Gaussian bumps over the (azimuth, elevation) parameter grid. Identity
/// bumps push the surface along its normal (shape bulges and dents); expression
/// bumps move vertices in a shared, mostly vertical or depth direction.
fn random_bump_field<R: Rng>(rng: &mut R, params: &[(f64, f64)], normals: &[Vector3<f64>], expression: bool) -> DVector<f64> {
    let n_bumps = if expression { 2 } else { 3 };
    let mut col = DVector::zeros(3 * params.len());
    for _ in 0..n_bumps {
        let (center, width, dir) = if expression {
            let center = (rng.gen_range(-0.6..0.6), rng.gen_range(-0.65..0.5));
            let width = (rng.gen_range(0.12..0.3), rng.gen_range(0.1..0.25));
            let dir = Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            (center, width, Some(dir.normalize()))
        } else {
            let center = (rng.gen_range(-1.2..1.2), rng.gen_range(-0.9..0.9));
            let width = (rng.gen_range(0.125..0.3), rng.gen_range(0.125..0.3));
            (center, width, None)
        };
        let amp = rng.gen_range(0.5..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        for (k, &(t, p)) in params.iter().enumerate() {
            let g = amp * bump(t, p, center, width);
            let d3 = dir.unwrap_or(normals[k]);
            for d in 0..3 {
                col[3 * k + d] += g * d3[d];
            }
        }
    }
    col
}

/// Orthonormal basis of translations, infinitesimal rotations about the centroid and
/// uniform scaling of `mean`.
fn similarity_modes(mean: &DVector<f64>) -> Vec<DVector<f64>> {
    let v = mean.len() / 3;
    let verts: Vec<Vector3<f64>> = (0..v).map(|i| Vector3::new(mean[3 * i], mean[3 * i + 1], mean[3 * i + 2])).collect();
    let centroid = verts.iter().sum::<Vector3<f64>>() / v as f64;
    let mut raw: Vec<DVector<f64>> = Vec::with_capacity(7);
    for axis in 0..3 {
        raw.push(DVector::from_fn(3 * v, |r, _| if r % 3 == axis { 1.0 } else { 0.0 }));
    }
    for axis in [Vector3::x(), Vector3::y(), Vector3::z()] {
        let mut m = DVector::zeros(3 * v);
        for (i, p) in verts.iter().enumerate() {
            m.fixed_rows_mut::<3>(3 * i).copy_from(&axis.cross(&(p - centroid)));
        }
        raw.push(m);
    }
    let mut s = DVector::zeros(3 * v);
    for (i, p) in verts.iter().enumerate() {
        s.fixed_rows_mut::<3>(3 * i).copy_from(&(p - centroid));
    }
    raw.push(s);
    let mut modes: Vec<DVector<f64>> = Vec::with_capacity(7);
    for mut m in raw {
        for q in &modes {
            let d = q.dot(&m);
            m.axpy(-d, q, 1.0);
        }
        let n = m.norm();
        if n > 1e-9 {
            modes.push(m / n);
        }
    }
    modes
}
