//! Diagnostic images: flow colorization and fitted-mesh overlays.
//!
//! Flow uses the standard optical-flow color wheel: hue encodes direction,
//! saturation encodes magnitude relative to the largest displayed vector, and
//! unmatchable pixels are black.

use image::{Rgb, RgbImage};

use crate::datagen::{FlowField, MatchabilityMask};
use crate::error::Result;
use crate::facemodel::{synthesize_shape, MorphableModel};
use crate::fit::{FitParameters, Landmark2D};

/// Segment lengths of the wheel: red-yellow, yellow-green, green-cyan,
/// cyan-blue, blue-magenta, magenta-red.
const WHEEL_SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];

/// The 55 wheel colors in order, starting at pure red.
pub fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(WHEEL_SEGMENTS.iter().sum());
    // each segment ramps one channel while holding the others
    let ramps: [([usize; 3], bool); 6] = [
        ([0, 1, 2], true),  // R=1, G up
        ([1, 0, 2], false), // G=1, R down
        ([1, 2, 0], true),  // G=1, B up
        ([2, 1, 0], false), // B=1, G down
        ([2, 0, 1], true),  // B=1, R up
        ([0, 2, 1], false), // R=1, B down
    ];
    for (len, (ch, up)) in WHEEL_SEGMENTS.iter().zip(ramps) {
        for i in 0..*len {
            let t = i as f64 / *len as f64;
            let mut c = [0.0; 3];
            c[ch[0]] = 1.0;
            c[ch[1]] = if up { t } else { 1.0 - t };
            wheel.push(c);
        }
    }
    wheel
}

/// Color of flow vector `(u, v)` already divided by the normalizing magnitude.
pub fn flow_color(u: f64, v: f64, wheel: &[[f64; 3]]) -> [u8; 3] {
    let rad = u.hypot(v);
    let angle = (-v).atan2(-u) / std::f64::consts::PI;
    let fk = (angle + 1.0) / 2.0 * (wheel.len() - 1) as f64;
    let k0 = fk.floor() as usize;
    let k1 = (k0 + 1) % wheel.len();
    let f = fk - k0 as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
        let col = if rad <= 1.0 { 1.0 - rad * (1.0 - col) } else { col * 0.75 };
        out[c] = (255.0 * col).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Colorizes `flow` where `mask >= threshold`. `max_magnitude` fixes the scale;
/// by default the largest displayed vector maps to full saturation.
pub fn flow_to_image(flow: &FlowField, mask: &MatchabilityMask, threshold: f32, max_magnitude: Option<f64>) -> RgbImage {
    let wheel = color_wheel();
    let shown = |i: usize| mask.data[i] >= threshold;
    let max = max_magnitude.unwrap_or_else(|| {
        (0..flow.data.len())
            .filter(|&i| shown(i))
            .map(|i| (flow.data[i][0] as f64).hypot(flow.data[i][1] as f64))
            .fold(0.0, f64::max)
    });
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    RgbImage::from_fn(flow.width, flow.height, |x, y| {
        let i = (y * flow.width + x) as usize;
        if !shown(i) {
            return Rgb([0, 0, 0]);
        }
        let [u, v] = flow.data[i];
        Rgb(flow_color(u as f64 * scale, v as f64 * scale, &wheel))
    })
}

fn blend(img: &mut RgbImage, x: i64, y: i64, color: [u8; 3], alpha: f64) {
    if x < 0 || y < 0 || x >= img.width() as i64 || y >= img.height() as i64 {
        return;
    }
    let p = img.get_pixel_mut(x as u32, y as u32);
    for c in 0..3 {
        p[c] = (p[c] as f64 * (1.0 - alpha) + color[c] as f64 * alpha).round() as u8;
    }
}

/// Bresenham line between pixel-rounded endpoints.
fn draw_line(img: &mut RgbImage, a: [f64; 2], b: [f64; 2], color: [u8; 3], alpha: f64) {
    let (mut x0, mut y0) = (a[0].round() as i64, a[1].round() as i64);
    let (x1, y1) = (b[0].round() as i64, b[1].round() as i64);
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        blend(img, x0, y0, color, alpha);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Opacity of the wireframe; each covered pixel is blended once, so dense
/// meshes on small images do not saturate.
const WIREFRAME_ALPHA: f64 = 0.4;

/// Composites the projected wireframe of the fitted mesh onto `image`.
/// Only triangles facing the camera are drawn.
pub fn overlay_wireframe(image: &RgbImage, fit: &FitParameters, model: &MorphableModel, color: [u8; 3]) -> Result<RgbImage> {
    let size = image.dimensions();
    let mut lines = RgbImage::new(size.0, size.1);
    let shape = synthesize_shape(model, &fit.coeffs)?;
    let cam: Vec<_> = shape.vertices.iter().map(|v| fit.pose.to_camera(v)).collect();
    let proj: Vec<_> = cam.iter().map(|c| fit.pose.project_camera_point(c, size)).collect();
    for t in &model.triangles {
        let [a, b, c] = t.map(|i| i as usize);
        let (Some(pa), Some(pb), Some(pc)) = (proj[a], proj[b], proj[c]) else {
            continue;
        };
        // camera looks down +z; front faces have normals pointing toward the camera
        let normal = (cam[b] - cam[a]).cross(&(cam[c] - cam[a]));
        if normal.dot(&cam[a]) >= 0.0 {
            continue;
        }
        for (p, q) in [(pa, pb), (pb, pc), (pc, pa)] {
            draw_line(&mut lines, [p.x, p.y], [q.x, q.y], [255; 3], 1.0);
        }
    }
    let mut out = image.clone();
    for (x, y, l) in lines.enumerate_pixels() {
        if l[0] > 0 {
            blend(&mut out, x as i64, y as i64, color, WIREFRAME_ALPHA);
        }
    }
    Ok(out)
}

/// Marks landmarks with small crosses: green when visible, red when hidden.
pub fn draw_landmarks(image: &mut RgbImage, landmarks: &[Landmark2D]) {
    for l in landmarks {
        if !(l.position[0].is_finite() && l.position[1].is_finite()) {
            continue;
        }
        let color = if l.visible { [40, 220, 40] } else { [230, 40, 40] };
        let (x, y) = (l.position[0].round() as i64, l.position[1].round() as i64);
        for d in -1..=1 {
            blend(image, x + d, y, color, 1.0);
            blend(image, x, y + d, color, 1.0);
        }
    }
}
