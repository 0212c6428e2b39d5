use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::Shape3D;
use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;
const GIMBAL_GUARD: f64 = 1e-6;

/// Yaw about the vertical (y) axis, pitch about x, roll about the optical (z) axis.
///
/// The rotation is `R = R_y(yaw) * R_x(pitch) * R_z(roll)`. Positive yaw turns the
/// face so that the subject's left cheek comes into view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    /// Set when pitch is within the gimbal guard of +-pi/2; roll is then reported as 0.
    #[serde(default)]
    pub degenerate: bool,
}

pub fn euler_to_rotation(yaw: f64, pitch: f64, roll: f64) -> Matrix3<f64> {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cp, -sp, 0.0, sp, cp);
    let rz = Matrix3::new(cr, -sr, 0.0, sr, cr, 0.0, 0.0, 0.0, 1.0);
    ry * rx * rz
}

pub fn rotation_to_euler(r: &Matrix3<f64>) -> EulerAngles {
    let sp = (-r[(1, 2)]).clamp(-1.0, 1.0);
    let pitch = sp.asin();
    if (pitch.abs() - std::f64::consts::FRAC_PI_2).abs() <= GIMBAL_GUARD {
        return EulerAngles {
            yaw: (-r[(2, 0)]).atan2(r[(0, 0)]),
            pitch,
            roll: 0.0,
            degenerate: true,
        };
    }
    EulerAngles {
        yaw: r[(0, 2)].atan2(r[(2, 2)]),
        pitch,
        roll: r[(1, 0)].atan2(r[(1, 1)]),
        degenerate: false,
    }
}

/// Angle of the relative rotation `a^T b`, in radians. Uses `atan2` so that
/// nearly identical rotations give an accurate (and never NaN) small angle.
pub fn rotation_geodesic(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let m = a.transpose() * b;
    let v = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    (0.5 * v.norm()).atan2(0.5 * (m.trace() - 1.0))
}

/// Pinhole camera: `p = R v + t`, image point `(f p_x / p_z + W/2, f p_y / p_z + H/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub focal: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn new(focal: f64, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = CameraPose {
            focal,
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_euler(focal: f64, euler: [f64; 3], translation: Vector3<f64>) -> Result<Self> {
        Self::new(focal, euler_to_rotation(euler[0], euler[1], euler[2]), translation)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "focal length must be positive, got {}",
                self.focal
            )));
        }
        if !is_rotation(&self.rotation) {
            return Err(Error::InvalidInput(
                "rotation is not orthonormal with determinant +1".into(),
            ));
        }
        if self.translation.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("translation must be finite".into()));
        }
        Ok(())
    }

    pub fn euler(&self) -> EulerAngles {
        rotation_to_euler(&self.rotation)
    }

    pub fn to_camera(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v + self.translation
    }

    /// Projects a camera-space point; `None` when it is not in front of the camera.
    pub fn project_camera_point(&self, p: &Vector3<f64>, image_size: (u32, u32)) -> Option<Vector2<f64>> {
        if !(p.z > 0.0) {
            return None;
        }
        Some(Vector2::new(
            self.focal * p.x / p.z + image_size.0 as f64 / 2.0,
            self.focal * p.y / p.z + image_size.1 as f64 / 2.0,
        ))
    }

    pub fn project_point(&self, v: &Vector3<f64>, image_size: (u32, u32)) -> Option<Vector2<f64>> {
        self.project_camera_point(&self.to_camera(v), image_size)
    }
}

pub(crate) fn is_rotation(r: &Matrix3<f64>) -> bool {
    if r.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let gram = r.transpose() * r;
    (gram - Matrix3::identity()).amax() <= ORTHONORMAL_TOL
        && (r.determinant() - 1.0).abs() <= ORTHONORMAL_TOL
}

/// Projects every vertex; vertices at or behind the camera plane come back as `None`.
pub fn project(
    shape: &Shape3D,
    pose: &CameraPose,
    image_size: (u32, u32),
) -> Result<Vec<Option<Vector2<f64>>>> {
    pose.validate()?;
    Ok(shape
        .vertices
        .iter()
        .map(|v| pose.project_point(v, image_size))
        .collect())
}
