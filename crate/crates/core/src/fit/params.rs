use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facemodel::{CameraPose, EulerAngles, MorphableModel, ShapeCoefficients};

/// The fitted state `X = (f, R, t, alpha_id, alpha_exp)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitParameters {
    pub pose: CameraPose,
    pub coeffs: ShapeCoefficients,
}

impl FitParameters {
    pub fn new(pose: CameraPose, coeffs: ShapeCoefficients) -> Self {
        FitParameters { pose, coeffs }
    }

    pub fn euler(&self) -> EulerAngles {
        self.pose.euler()
    }

    pub fn validate(&self, model: &MorphableModel) -> Result<()> {
        self.pose.validate()?;
        if self.coeffs.alpha_id.len() != model.k_id() {
            return Err(Error::DimensionMismatch {
                context: "alpha_id",
                expected: model.k_id(),
                actual: self.coeffs.alpha_id.len(),
            });
        }
        if self.coeffs.alpha_exp.len() != model.k_exp() {
            return Err(Error::DimensionMismatch {
                context: "alpha_exp",
                expected: model.k_exp(),
                actual: self.coeffs.alpha_exp.len(),
            });
        }
        if !self.coeffs.alpha_id.iter().chain(self.coeffs.alpha_exp.iter()).all(|a| a.is_finite()) {
            return Err(Error::InvalidInput("shape coefficients must be finite".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Frontal mean-face start: `f = W`, the face centered on `center` and
    /// spanning `fraction` of the image height.
    pub fn frontal_init(model: &MorphableModel, image_size: (u32, u32), center: [f64; 2], fraction: f64) -> Result<Self> {
        let mut pose = crate::raster::framing_pose(model, image_size, fraction)?;
        let z = pose.translation.z;
        let (cx, cy) = (image_size.0 as f64 / 2.0, image_size.1 as f64 / 2.0);
        pose.translation += Vector3::new((center[0] - cx) * z / pose.focal, (center[1] - cy) * z / pose.focal, 0.0);
        Ok(FitParameters::new(pose, model.zero_coefficients()))
    }
}
