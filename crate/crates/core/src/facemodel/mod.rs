//! Linear morphable face model.
//!
//! A face is `mean + A_id * alpha_id + A_exp * alpha_exp`, stored as a flat
//! `3V` vector with vertex `i` occupying rows `3i..3i+3`. Posed faces are mapped
//! to the image with a pinhole camera whose principal point is the image center.

mod camera;
pub mod io;
pub mod procedural;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use camera::{euler_to_rotation, project, rotation_geodesic, rotation_to_euler, CameraPose, EulerAngles};

/// The 21 landmarks of the evaluation protocol. Every model must annotate these.
pub const EVAL_LANDMARKS: [&str; 21] = [
    "right_brow_outer",
    "right_brow_center",
    "right_brow_inner",
    "left_brow_inner",
    "left_brow_center",
    "left_brow_outer",
    "right_eye_outer",
    "right_eye_center",
    "right_eye_inner",
    "left_eye_inner",
    "left_eye_center",
    "left_eye_outer",
    "right_ear",
    "nose_right",
    "nose_tip",
    "nose_left",
    "left_ear",
    "mouth_right",
    "mouth_center",
    "mouth_left",
    "chin",
];

/// Contour landmarks sit on the silhouette and are excluded from the visible-inner subset.
pub fn is_contour_landmark(name: &str) -> bool {
    name.starts_with("contour_") || matches!(name, "left_ear" | "right_ear" | "chin")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphableModel {
    /// `3V` vertex coordinates of the mean face.
    pub mean_shape: DVector<f64>,
    /// `3V x K_id`.
    pub identity_basis: DMatrix<f64>,
    /// `3V x K_exp`.
    pub expression_basis: DMatrix<f64>,
    pub sigma_id: DVector<f64>,
    pub sigma_exp: DVector<f64>,
    pub triangles: Vec<[u32; 3]>,
    /// Per-vertex uv in `[0,1]^2`.
    pub uv_coords: Vec<[f64; 2]>,
    pub landmark_indices: BTreeMap<String, u32>,
}

impl MorphableModel {
    pub fn vertex_count(&self) -> usize {
        self.mean_shape.len() / 3
    }

    pub fn k_id(&self) -> usize {
        self.identity_basis.ncols()
    }

    pub fn k_exp(&self) -> usize {
        self.expression_basis.ncols()
    }

    /// Checks every structural invariant of the model.
    pub fn validate(&self) -> Result<()> {
        let n = self.mean_shape.len();
        if n % 3 != 0 {
            return Err(Error::InvalidModel(format!(
                "mean shape length {n} is not a multiple of 3"
            )));
        }
        let v = n / 3;
        if v < 3 {
            return Err(Error::InvalidModel(format!("need at least 3 vertices, got {v}")));
        }
        if self.identity_basis.nrows() != n || self.expression_basis.nrows() != n {
            return Err(Error::InvalidModel("basis row count differs from 3V".into()));
        }
        if self.sigma_id.len() != self.k_id() || self.sigma_exp.len() != self.k_exp() {
            return Err(Error::InvalidModel("sigma length differs from basis rank".into()));
        }
        if self.sigma_id.iter().chain(self.sigma_exp.iter()).any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidModel("sigma values must be finite and positive".into()));
        }
        if self.mean_shape.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidModel("mean shape has non-finite entries".into()));
        }
        for basis in [&self.identity_basis, &self.expression_basis] {
            if basis.column_iter().any(|c| !c.norm().is_finite()) {
                return Err(Error::InvalidModel("basis column with non-finite norm".into()));
            }
        }
        if self.uv_coords.len() != v {
            return Err(Error::InvalidModel(format!(
                "{} uv coordinates for {v} vertices",
                self.uv_coords.len()
            )));
        }
        if self
            .uv_coords
            .iter()
            .flatten()
            .any(|c| !(0.0..=1.0).contains(c))
        {
            return Err(Error::InvalidModel("uv coordinates must lie in [0,1]^2".into()));
        }
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i as usize >= v)) {
            return Err(Error::InvalidModel(format!("triangle {t:?} indexes past {v} vertices")));
        }
        if let Some((name, _)) = self
            .landmark_indices
            .iter()
            .find(|(_, &i)| i as usize >= v)
        {
            return Err(Error::InvalidModel(format!("landmark {name} indexes past {v} vertices")));
        }
        let missing: Vec<&str> = EVAL_LANDMARKS
            .iter()
            .copied()
            .filter(|n| !self.landmark_indices.contains_key(*n))
            .collect();
        if !missing.is_empty() {
            return Err(Error::InvalidModel(format!("missing landmarks: {}", missing.join(", "))));
        }
        Ok(())
    }

    pub fn zero_coefficients(&self) -> ShapeCoefficients {
        ShapeCoefficients {
            alpha_id: DVector::zeros(self.k_id()),
            alpha_exp: DVector::zeros(self.k_exp()),
        }
    }

    pub fn mean_vertex(&self, i: usize) -> Vector3<f64> {
        Vector3::new(
            self.mean_shape[3 * i],
            self.mean_shape[3 * i + 1],
            self.mean_shape[3 * i + 2],
        )
    }

    /// Area-weighted outward vertex normals of a shape on this mesh.
    pub fn vertex_normals(&self, shape: &Shape3D) -> Vec<Vector3<f64>> {
        let mut normals = vec![Vector3::zeros(); shape.vertices.len()];
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| shape.vertices[i as usize]);
            // cross product magnitude is twice the area: area weighting for free
            let n = (b - a).cross(&(c - a));
            for &i in t {
                normals[i as usize] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeCoefficients {
    pub alpha_id: DVector<f64>,
    pub alpha_exp: DVector<f64>,
}

/// Vertex positions of one synthesized face, in model units.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape3D {
    pub vertices: Vec<Vector3<f64>>,
}

impl Shape3D {
    pub fn from_flat(flat: &DVector<f64>) -> Self {
        let vertices = flat
            .as_slice()
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect();
        Shape3D { vertices }
    }
}

/// `mean + A_id * alpha_id + A_exp * alpha_exp`, with no clamping.
pub fn synthesize_shape(model: &MorphableModel, coeffs: &ShapeCoefficients) -> Result<Shape3D> {
    if coeffs.alpha_id.len() != model.k_id() {
        return Err(Error::DimensionMismatch {
            context: "identity coefficients",
            expected: model.k_id(),
            actual: coeffs.alpha_id.len(),
        });
    }
    if coeffs.alpha_exp.len() != model.k_exp() {
        return Err(Error::DimensionMismatch {
            context: "expression coefficients",
            expected: model.k_exp(),
            actual: coeffs.alpha_exp.len(),
        });
    }
    let mut flat = model.mean_shape.clone();
    if model.k_id() > 0 {
        flat.gemv(1.0, &model.identity_basis, &coeffs.alpha_id, 1.0);
    }
    if model.k_exp() > 0 {
        flat.gemv(1.0, &model.expression_basis, &coeffs.alpha_exp, 1.0);
    }
    Ok(Shape3D::from_flat(&flat))
}
