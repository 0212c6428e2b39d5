//! Exact nearest-uv lookup over a render's face pixels.

use crate::raster::RenderedFace;

/// Uniform bucket grid over the uv bounding box of the valid pixels.
///
/// Queries are exact: cells are visited in growing Chebyshev rings until no
/// unvisited cell can hold a point at or below the best squared distance, and
/// equal distances resolve to the lowest pixel index (row-major, so lowest `(y, x)`).
#[derive(Debug, Clone)]
pub struct UvIndex {
    width: u32,
    origin: [f64; 2],
    cell: [f64; 2],
    dims: [usize; 2],
    /// Start offsets into `entries`, one per cell plus a sentinel.
    starts: Vec<usize>,
    entries: Vec<(u32, [f32; 2])>,
}

/// Squared uv distance, computed identically by the index and by callers that
/// want to compare against it.
#[inline]
pub fn uv_distance2(a: [f32; 2], b: [f32; 2]) -> f64 {
    let du = a[0] as f64 - b[0] as f64;
    let dv = a[1] as f64 - b[1] as f64;
    du * du + dv * dv
}

impl UvIndex {
    pub fn build(face: &RenderedFace) -> Self {
        let points: Vec<(u32, [f32; 2])> = face
            .face_mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| (i as u32, face.uv[i]))
            .collect();
        let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
        for (_, uv) in &points {
            for k in 0..2 {
                lo[k] = lo[k].min(uv[k] as f64);
                hi[k] = hi[k].max(uv[k] as f64);
            }
        }
        if points.is_empty() {
            lo = [0.0; 2];
            hi = [1.0; 2];
        }
        let side = ((points.len() as f64 / 2.0).sqrt().ceil() as usize).max(1);
        let dims = [side, side];
        let cell = [
            ((hi[0] - lo[0]) / side as f64).max(1e-12),
            ((hi[1] - lo[1]) / side as f64).max(1e-12),
        ];
        let mut index = UvIndex {
            width: face.width,
            origin: lo,
            cell,
            dims,
            starts: Vec::new(),
            entries: Vec::new(),
        };
        let mut counts = vec![0usize; side * side + 1];
        let keys: Vec<usize> = points.iter().map(|(_, uv)| index.cell_of(*uv)).collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut fill = counts.clone();
        let mut entries = vec![(0u32, [0f32; 2]); points.len()];
        // points arrive in ascending pixel order, so every bucket stays sorted
        for (p, &k) in points.iter().zip(&keys) {
            entries[fill[k]] = *p;
            fill[k] += 1;
        }
        index.starts = counts;
        index.entries = entries;
        index
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn axis_cell(&self, v: f64, k: usize) -> usize {
        let c = ((v - self.origin[k]) / self.cell[k]).floor();
        c.clamp(0.0, (self.dims[k] - 1) as f64) as usize
    }

    fn cell_of(&self, uv: [f32; 2]) -> usize {
        self.axis_cell(uv[1] as f64, 1) * self.dims[0] + self.axis_cell(uv[0] as f64, 0)
    }

    /// Nearest valid pixel as `(x, y, squared uv distance)`, or `None` for an empty index.
    pub fn nearest(&self, uv: [f32; 2]) -> Option<(u32, u32, f64)> {
        if self.entries.is_empty() {
            return None;
        }
        let q = [uv[0] as f64, uv[1] as f64];
        let c = [self.axis_cell(q[0], 0), self.axis_cell(q[1], 1)];
        let mut best: Option<(f64, u32)> = None;
        let max_ring = self.dims[0].max(self.dims[1]);
        for r in 0..=max_ring {
            let (c0, r0) = (c[0] as isize - r as isize, c[1] as isize - r as isize);
            let (c1, r1) = (c[0] as isize + r as isize, c[1] as isize + r as isize);
            for cy in r0.max(0)..=r1.min(self.dims[1] as isize - 1) {
                let on_edge_row = cy == r0 || cy == r1;
                let mut cx = c0.max(0);
                while cx <= c1.min(self.dims[0] as isize - 1) {
                    let cell = cy as usize * self.dims[0] + cx as usize;
                    for &(idx, p) in &self.entries[self.starts[cell]..self.starts[cell + 1]] {
                        let d = uv_distance2(uv, p);
                        if best.map_or(true, |(bd, bi)| d < bd || (d == bd && idx < bi)) {
                            best = Some((d, idx));
                        }
                    }
                    cx = if on_edge_row || cx == c1 { cx + 1 } else { c1 };
                }
            }
            // distance from q to the nearest cell outside the visited square
            let mut bound = f64::INFINITY;
            if c0 > 0 {
                bound = bound.min(q[0] - (self.origin[0] + c0 as f64 * self.cell[0]));
            }
            if c1 < self.dims[0] as isize - 1 {
                bound = bound.min(self.origin[0] + (c1 + 1) as f64 * self.cell[0] - q[0]);
            }
            if r0 > 0 {
                bound = bound.min(q[1] - (self.origin[1] + r0 as f64 * self.cell[1]));
            }
            if r1 < self.dims[1] as isize - 1 {
                bound = bound.min(self.origin[1] + (r1 + 1) as f64 * self.cell[1] - q[1]);
            }
            if bound == f64::INFINITY {
                break;
            }
            // slack absorbs rounding in the cell assignment
            let bound = (bound - 1e-9 * (1.0 + q[0].abs() + q[1].abs())).max(0.0);
            if let Some((bd, _)) = best {
                if bd < bound * bound {
                    break;
                }
            }
        }
        best.map(|(d, idx)| (idx % self.width, idx / self.width, d))
    }
}
