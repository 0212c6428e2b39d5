//! Damped Gauss-Newton fit of pose and shape to 2D-3D correspondences.
//!
//! Energy: `E = sum_i w_i |p_i - proj(R S_qi + t)|^2 + w_id sum (a_id/s_id)^2 + w_exp sum (a_exp/s_exp)^2`.
//! Each iteration sweeps three blocks (pose `(f, R, t)`, identity, expression) and
//! then takes one joint step over all parameters. Every step is a
//! Levenberg-Marquardt step on the exact Jacobian and is accepted only if it lowers
//! `E`, so recorded energies never increase. The joint step matters at large yaw,
//! where rotation and identity are strongly coupled and block steps alone zigzag.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::{CorrespondenceSet, FitParameters};
use crate::error::{Error, Result};
use crate::facemodel::{CameraPose, MorphableModel};

pub const FOCAL_BOUNDS: [f64; 2] = [50.0, 5000.0];
const MAX_ESCALATIONS: usize = 5;
const MAX_ATTEMPTS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub max_iters: usize,
    pub w_id: f64,
    pub w_exp: f64,
    /// Stop when a sweep lowers E by less than this fraction.
    pub rel_tol: f64,
    /// Stop when every accepted step in a sweep is shorter than this.
    pub step_tol: f64,
    pub optimize_focal: bool,
    pub focal_bounds: [f64; 2],
    /// Huber threshold in pixels for reweighting; `None` keeps the plain L2 data term.
    pub huber_delta: Option<f64>,
    pub initial_damping: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iters: 50,
            w_id: 2.5e-5,
            w_exp: 1000.0,
            rel_tol: 1e-8,
            step_tol: 1e-10,
            optimize_focal: true,
            focal_bounds: FOCAL_BOUNDS,
            huber_delta: None,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub e_data: f64,
    pub e_reg: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Energy at the start (entry 0) and after every sweep.
    pub iterations: Vec<IterationRecord>,
    /// Unweighted RMS reprojection error over the correspondences, pixels.
    pub reprojection_rms: f64,
    pub iteration_count: usize,
    pub converged: bool,
    /// The normal equations stayed singular after repeated damping increases.
    pub degenerate: bool,
    pub focal_clamped: bool,
    /// Excluded from serialized reports so they stay reproducible.
    #[serde(skip)]
    pub wall_time_ms: f64,
}

impl FitReport {
    pub fn final_energy(&self) -> f64 {
        self.iterations.last().map_or(f64::NAN, |r| r.total)
    }

    /// Number of recorded steps where the energy went up.
    pub fn descent_violations(&self) -> usize {
        self.iterations.windows(2).filter(|w| w[1].total > w[0].total).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Pose,
    Identity,
    Expression,
    /// Every parameter at once.
    Joint,
}

/// Correspondences with their model rows gathered contiguously.
struct Problem<'a> {
    n: usize,
    k_id: usize,
    k_exp: usize,
    p: Vec<[f64; 2]>,
    w: Vec<f64>,
    mean: Vec<[f64; 3]>,
    /// `[corr][axis][k]`
    b_id: Vec<f64>,
    b_exp: Vec<f64>,
    inv_sigma_id: Vec<f64>,
    inv_sigma_exp: Vec<f64>,
    center: [f64; 2],
    opts: &'a FitOptions,
}

struct PointEval {
    /// Camera-space point.
    cam: Vector3<f64>,
    /// Rotated shape point `R S`.
    rs: Vector3<f64>,
    proj: [f64; 2],
}

impl<'a> Problem<'a> {
    fn new(corr: &CorrespondenceSet, model: &MorphableModel, opts: &'a FitOptions) -> Self {
        let (k_id, k_exp) = (model.k_id(), model.k_exp());
        let n = corr.entries.len();
        let mut b_id = Vec::with_capacity(n * 3 * k_id);
        let mut b_exp = Vec::with_capacity(n * 3 * k_exp);
        let mut mean = Vec::with_capacity(n);
        for c in &corr.entries {
            let q = c.q as usize;
            let m = model.mean_vertex(q);
            mean.push([m.x, m.y, m.z]);
            for a in 0..3 {
                for k in 0..k_id {
                    b_id.push(model.identity_basis[(3 * q + a, k)]);
                }
                for k in 0..k_exp {
                    b_exp.push(model.expression_basis[(3 * q + a, k)]);
                }
            }
        }
        Problem {
            n,
            k_id,
            k_exp,
            p: corr.entries.iter().map(|c| c.p).collect(),
            w: corr.entries.iter().map(|c| c.w).collect(),
            mean,
            b_id,
            b_exp,
            inv_sigma_id: model.sigma_id.iter().map(|s| 1.0 / s).collect(),
            inv_sigma_exp: model.sigma_exp.iter().map(|s| 1.0 / s).collect(),
            center: [corr.image_size.0 as f64 / 2.0, corr.image_size.1 as f64 / 2.0],
            opts,
        }
    }

    fn shape_point(&self, i: usize, x: &FitParameters) -> Vector3<f64> {
        let mut s = self.mean[i];
        for a in 0..3 {
            let row = &self.b_id[(i * 3 + a) * self.k_id..(i * 3 + a + 1) * self.k_id];
            s[a] += row.iter().zip(x.coeffs.alpha_id.iter()).map(|(b, c)| b * c).sum::<f64>();
            let row = &self.b_exp[(i * 3 + a) * self.k_exp..(i * 3 + a + 1) * self.k_exp];
            s[a] += row.iter().zip(x.coeffs.alpha_exp.iter()).map(|(b, c)| b * c).sum::<f64>();
        }
        Vector3::new(s[0], s[1], s[2])
    }

    fn eval_point(&self, i: usize, x: &FitParameters) -> PointEval {
        let rs = x.pose.rotation * self.shape_point(i, x);
        let cam = rs + x.pose.translation;
        let f = x.pose.focal;
        PointEval {
            cam,
            rs,
            proj: [f * cam.x / cam.z + self.center[0], f * cam.y / cam.z + self.center[1]],
        }
    }

    /// Huber factor on the squared residual: energy contribution and IRLS weight.
    fn robust(&self, r2: f64) -> (f64, f64) {
        match self.opts.huber_delta {
            Some(d) if r2 > d * d => {
                let s = r2.sqrt();
                (2.0 * d * s - d * d, d / s)
            }
            _ => (r2, 1.0),
        }
    }

    fn e_reg(&self, x: &FitParameters) -> f64 {
        let id: f64 = x.coeffs.alpha_id.iter().zip(&self.inv_sigma_id).map(|(a, s)| (a * s).powi(2)).sum();
        let exp: f64 = x.coeffs.alpha_exp.iter().zip(&self.inv_sigma_exp).map(|(a, s)| (a * s).powi(2)).sum();
        self.opts.w_id * id + self.opts.w_exp * exp
    }

    fn energy(&self, x: &FitParameters) -> IterationRecord {
        let mut e_data = 0.0;
        for i in 0..self.n {
            let pe = self.eval_point(i, x);
            if !(pe.cam.z > 0.0) {
                e_data = f64::INFINITY;
                break;
            }
            let r2 = (pe.proj[0] - self.p[i][0]).powi(2) + (pe.proj[1] - self.p[i][1]).powi(2);
            e_data += self.w[i] * self.robust(r2).0;
        }
        let e_reg = self.e_reg(x);
        IterationRecord {
            e_data,
            e_reg,
            total: e_data + e_reg,
        }
    }

    fn rms(&self, x: &FitParameters) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            let pe = self.eval_point(i, x);
            s += (pe.proj[0] - self.p[i][0]).powi(2) + (pe.proj[1] - self.p[i][1]).powi(2);
        }
        (s / self.n.max(1) as f64).sqrt()
    }

    fn n_params(&self) -> usize {
        7 + self.k_id + self.k_exp
    }

    /// Column range of the block within the full parameter increment.
    fn block_range(&self, block: Block) -> std::ops::Range<usize> {
        match block {
            Block::Pose => 0..7,
            Block::Identity => 7..7 + self.k_id,
            Block::Expression => 7 + self.k_id..self.n_params(),
            Block::Joint => 0..self.n_params(),
        }
    }

    /// Writes the Jacobian of the (unweighted) projection of point `i` with
    /// respect to the full increment into `out` as two rows.
    fn point_jacobian(&self, i: usize, x: &FitParameters, pe: &PointEval, out: &mut [Vec<f64>; 2]) {
        let f = x.pose.focal;
        let c = &pe.cam;
        let iz = 1.0 / c.z;
        // d proj / d cam
        let (du0, du2) = (f * iz, -f * c.x * iz * iz);
        let (dv1, dv2) = (f * iz, -f * c.y * iz * iz);
        let mut col = |k: usize, d: Vector3<f64>| {
            out[0][k] = du0 * d.x + du2 * d.z;
            out[1][k] = dv1 * d.y + dv2 * d.z;
        };
        for k in 0..3 {
            col(1 + k, Vector3::ith(k, 1.0).cross(&pe.rs));
            col(4 + k, Vector3::ith(k, 1.0));
        }
        for (basis, kk, offset) in [(&self.b_id, self.k_id, 7), (&self.b_exp, self.k_exp, 7 + self.k_id)] {
            let base = i * 3 * kk;
            for k in 0..kk {
                let b = Vector3::new(basis[base + k], basis[base + kk + k], basis[base + 2 * kk + k]);
                col(offset + k, x.pose.rotation * b);
            }
        }
        out[0][0] = c.x * iz;
        out[1][0] = c.y * iz;
    }

    /// Normal equations `(J^T W J, J^T W r)` of the block, IRLS-weighted.
    fn normal_equations(&self, x: &FitParameters, block: Block) -> (DMatrix<f64>, DVector<f64>) {
        let range = self.block_range(block);
        let (o, m) = (range.start, range.len());
        let mut jtj = DMatrix::zeros(m, m);
        let mut jtr = DVector::zeros(m);
        let mut rows = [vec![0.0; self.n_params()], vec![0.0; self.n_params()]];
        for i in 0..self.n {
            let pe = self.eval_point(i, x);
            let r = [pe.proj[0] - self.p[i][0], pe.proj[1] - self.p[i][1]];
            let w = self.w[i] * self.robust(r[0] * r[0] + r[1] * r[1]).1;
            if w == 0.0 {
                continue;
            }
            self.point_jacobian(i, x, &pe, &mut rows);
            for (row, ri) in rows.iter().zip(r) {
                let row = &row[o..o + m];
                for a in 0..m {
                    let wa = w * row[a];
                    jtr[a] += wa * ri;
                    for b in a..m {
                        jtj[(a, b)] += wa * row[b];
                    }
                }
            }
        }
        let priors = [
            (7, self.opts.w_id, &self.inv_sigma_id, &x.coeffs.alpha_id),
            (7 + self.k_id, self.opts.w_exp, &self.inv_sigma_exp, &x.coeffs.alpha_exp),
        ];
        for (start, wp, inv_s, alpha) in priors {
            for k in 0..alpha.len() {
                if range.contains(&(start + k)) {
                    let d = wp * inv_s[k] * inv_s[k];
                    jtj[(start + k - o, start + k - o)] += d;
                    jtr[start + k - o] += d * alpha[k];
                }
            }
        }
        for a in 0..m {
            for b in 0..a {
                jtj[(a, b)] = jtj[(b, a)];
            }
        }
        (jtj, jtr)
    }
}

/// Applies a parameter increment `[df, w(3), dt(3), d_alpha_id, d_alpha_exp]`;
/// the rotation is updated as `exp([w]x) R`.
pub fn retract(x: &FitParameters, delta: &DVector<f64>) -> FitParameters {
    let mut out = x.clone();
    let k_id = x.coeffs.alpha_id.len();
    out.pose.focal += delta[0];
    let w = Vector3::new(delta[1], delta[2], delta[3]);
    out.pose.rotation = orthonormalize(&(Rotation3::new(w).into_inner() * x.pose.rotation));
    out.pose.translation += Vector3::new(delta[4], delta[5], delta[6]);
    for k in 0..k_id {
        out.coeffs.alpha_id[k] += delta[7 + k];
    }
    for k in 0..x.coeffs.alpha_exp.len() {
        out.coeffs.alpha_exp[k] += delta[7 + k_id + k];
    }
    out
}

fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut m = u * vt;
    if m.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        m = u * vt;
    }
    m
}

/// Stacked residual vector: `2N` weighted reprojection residuals
/// `sqrt(w_i) (proj - p_i)` followed by the prior residuals
/// `sqrt(w_id) a_id / s_id` and `sqrt(w_exp) a_exp / s_exp`.
pub fn residuals(corr: &CorrespondenceSet, model: &MorphableModel, x: &FitParameters, opts: &FitOptions) -> DVector<f64> {
    let pb = Problem::new(corr, model, opts);
    let mut r = DVector::zeros(2 * pb.n + pb.k_id + pb.k_exp);
    for i in 0..pb.n {
        let pe = pb.eval_point(i, x);
        let sw = pb.w[i].sqrt();
        r[2 * i] = sw * (pe.proj[0] - pb.p[i][0]);
        r[2 * i + 1] = sw * (pe.proj[1] - pb.p[i][1]);
    }
    for k in 0..pb.k_id {
        r[2 * pb.n + k] = opts.w_id.sqrt() * x.coeffs.alpha_id[k] * pb.inv_sigma_id[k];
    }
    for k in 0..pb.k_exp {
        r[2 * pb.n + pb.k_id + k] = opts.w_exp.sqrt() * x.coeffs.alpha_exp[k] * pb.inv_sigma_exp[k];
    }
    r
}

/// Analytic Jacobian of [`residuals`] with respect to the increment of [`retract`].
pub fn jacobian(corr: &CorrespondenceSet, model: &MorphableModel, x: &FitParameters, opts: &FitOptions) -> DMatrix<f64> {
    let pb = Problem::new(corr, model, opts);
    let cols = 7 + pb.k_id + pb.k_exp;
    let mut j = DMatrix::zeros(2 * pb.n + pb.k_id + pb.k_exp, cols);
    let mut rows = [vec![0.0; cols], vec![0.0; cols]];
    for i in 0..pb.n {
        let pe = pb.eval_point(i, x);
        let sw = pb.w[i].sqrt();
        pb.point_jacobian(i, x, &pe, &mut rows);
        for k in 0..cols {
            j[(2 * i, k)] = sw * rows[0][k];
            j[(2 * i + 1, k)] = sw * rows[1][k];
        }
    }
    for k in 0..pb.k_id {
        j[(2 * pb.n + k, 7 + k)] = opts.w_id.sqrt() * pb.inv_sigma_id[k];
    }
    for k in 0..pb.k_exp {
        j[(2 * pb.n + pb.k_id + k, 7 + pb.k_id + k)] = opts.w_exp.sqrt() * pb.inv_sigma_exp[k];
    }
    j
}

fn check_preconditions(corr: &CorrespondenceSet, model: &MorphableModel, init: &FitParameters, opts: &FitOptions) -> Result<()> {
    if corr.len() < 6 {
        return Err(Error::InvalidInput(format!("the solver needs at least 6 correspondences, got {}", corr.len())));
    }
    corr.validate(model)?;
    init.validate(model)?;
    if !(opts.w_id >= 0.0 && opts.w_exp >= 0.0 && opts.w_id.is_finite() && opts.w_exp.is_finite()) {
        return Err(Error::InvalidInput("prior weights must be finite and non-negative".into()));
    }
    if !(opts.focal_bounds[0] > 0.0 && opts.focal_bounds[0] <= opts.focal_bounds[1]) {
        return Err(Error::InvalidInput("focal bounds must satisfy 0 < lo <= hi".into()));
    }
    // at least three non-collinear vertices
    let pts: Vec<Vector3<f64>> = corr.entries.iter().map(|c| model.mean_vertex(c.q as usize)).collect();
    let a = pts[0];
    let b = pts.iter().max_by(|u, v| (*u - a).norm().total_cmp(&(*v - a).norm())).copied().unwrap();
    let spread = pts.iter().map(|c| (b - a).cross(&(c - a)).norm()).fold(0.0, f64::max);
    if spread <= 1e-12 * (1.0 + (b - a).norm_squared()) {
        return Err(Error::InvalidInput(
            "correspondences must span at least 3 non-collinear vertices".into(),
        ));
    }
    Ok(())
}

/// Minimizes the fitting energy from `init`.
pub fn solve(
    corr: &CorrespondenceSet,
    model: &MorphableModel,
    init: &FitParameters,
    opts: &FitOptions,
) -> Result<(FitParameters, FitReport)> {
    let start = Instant::now();
    check_preconditions(corr, model, init, opts)?;
    let pb = Problem::new(corr, model, opts);
    let mut x = init.clone();
    let mut focal_clamped = false;
    let [flo, fhi] = opts.focal_bounds;
    if !(flo..=fhi).contains(&x.pose.focal) {
        x.pose.focal = x.pose.focal.clamp(flo, fhi);
        focal_clamped = true;
    }
    let mut current = pb.energy(&x);
    if !current.total.is_finite() {
        return Err(Error::InvalidInput("initial parameters place correspondences behind the camera".into()));
    }
    let mut records = vec![current];
    let mut damping = [opts.initial_damping; 4];
    let mut degenerate = false;
    let mut converged = false;
    let mut iterations = 0;
    let blocks = [Block::Pose, Block::Identity, Block::Expression, Block::Joint];

    while iterations < opts.max_iters {
        iterations += 1;
        let sweep_start = current.total;
        let mut max_step: f64 = 0.0;
        let mut any_accepted = false;
        for (bi, &block) in blocks.iter().enumerate() {
            let range = pb.block_range(block);
            let m = range.len();
            if m == 0 {
                continue;
            }
            let (jtj, jtr) = pb.normal_equations(&x, block);
            let mut fixed_focal = range.start == 0 && !opts.optimize_focal;
            let scale_floor = 1e-12 * jtj.diagonal().amax().max(f64::MIN_POSITIVE);
            let mut escalations = 0;
            for _ in 0..MAX_ATTEMPTS {
                let mut a = jtj.clone();
                for k in 0..m {
                    a[(k, k)] += damping[bi] * jtj[(k, k)].max(scale_floor);
                }
                let mut g = jtr.clone();
                if fixed_focal {
                    // pin f by zeroing its row/column
                    for k in 0..m {
                        a[(0, k)] = 0.0;
                        a[(k, 0)] = 0.0;
                    }
                    a[(0, 0)] = 1.0;
                    g[0] = 0.0;
                }
                let Some(chol) = a.cholesky() else {
                    escalations += 1;
                    damping[bi] *= 10.0;
                    if escalations > MAX_ESCALATIONS {
                        degenerate = true;
                        break;
                    }
                    continue;
                };
                let step = -chol.solve(&g);
                let mut full = DVector::zeros(pb.n_params());
                full.rows_mut(range.start, m).copy_from(&step);
                let mut candidate = retract(&x, &full);
                let mut clamped = false;
                if !(flo..=fhi).contains(&candidate.pose.focal) {
                    candidate.pose.focal = candidate.pose.focal.clamp(flo, fhi);
                    clamped = true;
                }
                let e = pb.energy(&candidate);
                if e.total < current.total {
                    x = candidate;
                    current = e;
                    damping[bi] = (damping[bi] / 3.0).max(1e-12);
                    max_step = max_step.max(step.norm());
                    any_accepted = true;
                    focal_clamped |= clamped;
                    break;
                }
                damping[bi] *= 10.0;
                if clamped && range.start == 0 {
                    fixed_focal = true;
                }
            }
        }
        records.push(current);
        if !any_accepted {
            converged = !degenerate;
            break;
        }
        let decrease = (sweep_start - current.total) / sweep_start.max(f64::MIN_POSITIVE);
        if decrease < opts.rel_tol || max_step < opts.step_tol {
            converged = true;
            break;
        }
    }
    let report = FitReport {
        reprojection_rms: pb.rms(&x),
        iterations: records,
        iteration_count: iterations,
        converged: converged && !degenerate,
        degenerate,
        focal_clamped,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    x.pose = CameraPose::new(x.pose.focal, x.pose.rotation, x.pose.translation)?;
    Ok((x, report))
}
