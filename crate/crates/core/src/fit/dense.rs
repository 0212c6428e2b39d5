use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::FitParameters;
use crate::datagen::{compute_gt_correspondence, FlowField, MatchabilityMask};
use crate::error::Result;
use crate::facemodel::{synthesize_shape, MorphableModel};
use crate::raster::{rasterize_attributes, rasterize_geometry, RenderedFace};

/// Hole-free flow and matchability regenerated from a fit against `template`.
pub fn recover_dense(
    fit: &FitParameters,
    model: &MorphableModel,
    template: &RenderedFace,
    uv_threshold: f32,
) -> Result<(FlowField, MatchabilityMask)> {
    fit.validate(model)?;
    let source = rasterize_attributes(model, &fit.coeffs, &fit.pose, template.size())?;
    compute_gt_correspondence(&source, template, uv_threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark2D {
    pub name: String,
    pub position: [f64; 2],
    pub visible: bool,
}

/// Projects every model landmark under the fit.
///
/// A landmark is visible when a pixel within one pixel of its projection
/// (3x3 window around the rounded position) is covered by a triangle incident
/// to the landmark vertex, i.e. the z-buffer let that vertex's own surface through.
pub fn landmarks_2d(fit: &FitParameters, model: &MorphableModel, image_size: (u32, u32)) -> Result<Vec<Landmark2D>> {
    fit.validate(model)?;
    let shape = synthesize_shape(model, &fit.coeffs)?;
    let geo = rasterize_geometry(model, &fit.coeffs, &fit.pose, image_size)?;
    let (w, h) = image_size;
    let mut out = Vec::with_capacity(model.landmark_indices.len());
    for (name, &vi) in &model.landmark_indices {
        let projected = fit.pose.project_point(&shape.vertices[vi as usize], image_size);
        let visible = projected.is_some_and(|p| {
            let (rx, ry) = (p.x.round() as i64, p.y.round() as i64);
            (-1..=1).any(|dy| {
                (-1..=1).any(|dx| {
                    let (x, y) = (rx + dx, ry + dy);
                    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                        return false;
                    }
                    let a = geo.attr[(y as u32 * w + x as u32) as usize];
                    a.is_valid() && model.triangles[a.triangle as usize].contains(&vi)
                })
            })
        });
        let p = projected.unwrap_or(Vector2::new(f64::NAN, f64::NAN));
        out.push(Landmark2D {
            name: name.clone(),
            position: [p.x, p.y],
            visible,
        });
    }
    Ok(out)
}
