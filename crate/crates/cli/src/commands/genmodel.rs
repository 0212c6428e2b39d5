use std::path::Path;

use densecorr_core::facemodel::io::save_model;
use densecorr_core::facemodel::procedural::generate;

use super::create_dir;
use crate::config::{snapshot_for_file, RunConfig};
use crate::error::Result;

/// Writes the procedural model to `out` and returns a one-line summary.
pub fn genmodel(cfg: &RunConfig, out: &Path) -> Result<String> {
    let model = generate(&cfg.model)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_model(&model, out)?;
    cfg.write_snapshot(&snapshot_for_file(out))?;
    Ok(format!(
        "V={} K_id={} K_exp={} triangles={} landmarks={}",
        model.vertex_count(),
        model.k_id(),
        model.k_exp(),
        model.triangles.len(),
        model.landmark_indices.len()
    ))
}
