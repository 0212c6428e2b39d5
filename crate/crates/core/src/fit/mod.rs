//! Model fitting from dense correspondences.
//!
//! Predicted flow is filtered by matchability and turned into 2D-3D
//! correspondences against the template's attribute buffer; [`solve`] then
//! recovers focal length, rotation, translation and shape coefficients.
//! [`recover_dense`] re-renders the fit to fill holes in the prediction.

mod correspondences;
mod dense;
mod params;
mod pipeline;
mod solver;

pub use correspondences::{flow_to_correspondences, Correspondence, CorrespondenceSet};
pub use dense::{landmarks_2d, recover_dense, Landmark2D};
pub use params::FitParameters;
pub use pipeline::{fit_from_flow, FlowFit, FlowFitConfig};
pub use solver::{jacobian, residuals, retract, solve, FitOptions, FitReport, IterationRecord, FOCAL_BOUNDS};

#[cfg(test)]
mod tests;
