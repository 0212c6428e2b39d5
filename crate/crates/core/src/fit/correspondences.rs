use std::fmt::Write as _;

use crate::datagen::{endpoint_pixel, FlowField, MatchabilityMask};
use crate::error::{Error, Result};
use crate::facemodel::MorphableModel;
use crate::raster::RenderedFace;

/// One 2D-3D correspondence: source pixel `p`, model vertex `q`, weight `w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub p: [f64; 2],
    pub q: u32,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub image_size: (u32, u32),
    pub entries: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Mean image position of the entries (the image center when empty).
    pub fn centroid(&self) -> [f64; 2] {
        if self.entries.is_empty() {
            return [self.image_size.0 as f64 / 2.0, self.image_size.1 as f64 / 2.0];
        }
        let n = self.entries.len() as f64;
        [
            self.entries.iter().map(|c| c.p[0]).sum::<f64>() / n,
            self.entries.iter().map(|c| c.p[1]).sum::<f64>() / n,
        ]
    }

    pub fn validate(&self, model: &MorphableModel) -> Result<()> {
        let v = model.vertex_count();
        for (i, c) in self.entries.iter().enumerate() {
            if c.q as usize >= v {
                return Err(Error::InvalidInput(format!("correspondence {i}: vertex {} out of {v}", c.q)));
            }
            if !(c.w >= 0.0 && c.w.is_finite()) || !c.p.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidInput(format!("correspondence {i}: non-finite point or bad weight")));
            }
        }
        Ok(())
    }

    /// Text form: a `# size W H` header, then one `px py q w` line per entry.
    pub fn to_text(&self) -> String {
        let mut s = format!("# size {} {}\n", self.image_size.0, self.image_size.1);
        for c in &self.entries {
            let _ = writeln!(s, "{} {} {} {}", c.p[0], c.p[1], c.q, c.w);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut image_size = None;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('#') {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if let ["size", w, h] = parts.as_slice() {
                    let parse = |s: &str| s.parse::<u32>().map_err(|_| Error::format("correspondences", format!("line {}: bad size", n + 1)));
                    image_size = Some((parse(w)?, parse(h)?));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let bad = || Error::format("correspondences", format!("line {}: expected `px py q w`, got {line:?}", n + 1));
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(bad());
            }
            entries.push(Correspondence {
                p: [parts[0].parse().map_err(|_| bad())?, parts[1].parse().map_err(|_| bad())?],
                q: parts[2].parse().map_err(|_| bad())?,
                w: parts[3].parse().map_err(|_| bad())?,
            });
        }
        let image_size = image_size.ok_or_else(|| Error::format("correspondences", "missing `# size W H` header"))?;
        Ok(CorrespondenceSet { image_size, entries })
    }
}

/// Filters predicted flow by matchability and maps surviving endpoints to
/// template vertices. Returns the set and the number of endpoints that missed
/// the template face.
pub fn flow_to_correspondences(
    flow: &FlowField,
    matchability: &MatchabilityMask,
    template: &RenderedFace,
    model: &MorphableModel,
    match_threshold: f32,
    stride: u32,
) -> Result<(CorrespondenceSet, usize)> {
    let size = template.size();
    if (flow.width, flow.height) != size || (matchability.width, matchability.height) != size {
        return Err(Error::DimensionMismatch {
            context: "flow/matchability/template pixel count",
            expected: (size.0 * size.1) as usize,
            actual: flow.data.len(),
        });
    }
    if stride == 0 {
        return Err(Error::InvalidInput("stride must be at least 1".into()));
    }
    let mut entries = Vec::new();
    let mut dropped = 0;
    for y in (0..size.1).step_by(stride as usize) {
        for x in (0..size.0).step_by(stride as usize) {
            let i = (y * size.0 + x) as usize;
            let m = matchability.data[i];
            if !(m >= match_threshold) {
                continue;
            }
            let vertex = endpoint_pixel(x, y, flow.data[i], size)
                .and_then(|(ex, ey)| template.dominant_vertex(model, template.index(ex, ey)));
            match vertex {
                Some(q) => entries.push(Correspondence {
                    p: [x as f64, y as f64],
                    q,
                    w: m as f64,
                }),
                None => dropped += 1,
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::NoCorrespondences { dropped });
    }
    Ok((CorrespondenceSet { image_size: size, entries }, dropped))
}
