//! Render persistence: PNG color plus a `DCRB` sidecar with the attribute buffers.
//!
//! Sidecar layout (little-endian): magic `DCRB`, version u32, W u32, H u32, uv f32[2N],
//! triangle u32[N], barycentrics f32[3N], depth f32[N], face mask u8[N], occluder
//! mask u8[N], then the four render-report counters as u32 (the last a 0/1 flag).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{PixelAttr, RenderReport, RenderedFace};
use crate::error::{Error, Result};

pub const RENDER_MAGIC: &[u8; 4] = b"DCRB";
pub const RENDER_VERSION: u32 = 1;
const MAX_SIDE: u32 = 1 << 14;

pub fn write_buffers<W: Write>(face: &RenderedFace, mut w: W) -> Result<()> {
    w.write_all(RENDER_MAGIC)?;
    w.write_u32::<LittleEndian>(RENDER_VERSION)?;
    w.write_u32::<LittleEndian>(face.width)?;
    w.write_u32::<LittleEndian>(face.height)?;
    for uv in &face.uv {
        w.write_f32::<LittleEndian>(uv[0])?;
        w.write_f32::<LittleEndian>(uv[1])?;
    }
    for a in &face.attr {
        w.write_u32::<LittleEndian>(a.triangle)?;
    }
    for a in &face.attr {
        for b in a.bary {
            w.write_f32::<LittleEndian>(b)?;
        }
    }
    for &d in &face.depth {
        w.write_f32::<LittleEndian>(d)?;
    }
    for mask in [&face.face_mask, &face.occluder_mask] {
        let bytes: Vec<u8> = mask.iter().map(|&m| m as u8).collect();
        w.write_all(&bytes)?;
    }
    let r = &face.report;
    for v in [
        r.degenerate_triangles as u32,
        r.behind_camera_triangles as u32,
        r.backfacing_triangles as u32,
        r.all_behind_camera as u32,
    ] {
        w.write_u32::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut out = vec![0.0; n];
    r.read_f32_into::<LittleEndian>(&mut out)
        .map_err(|e| Error::format("render buffers", format!("truncated: {e}")))?;
    Ok(out)
}

/// Reads the sidecar; `color` is supplied separately (normally from the PNG).
pub fn read_buffers<R: Read>(mut r: R, color: image::RgbImage) -> Result<RenderedFace> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format("render buffers", "missing magic"))?;
    if &magic != RENDER_MAGIC {
        return Err(Error::format("render buffers", format!("bad magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != RENDER_VERSION {
        return Err(Error::format("render buffers", format!("unsupported version {version}")));
    }
    let w = r.read_u32::<LittleEndian>()?;
    let h = r.read_u32::<LittleEndian>()?;
    if w == 0 || h == 0 || w > MAX_SIDE || h > MAX_SIDE {
        return Err(Error::format("render buffers", format!("implausible size {w}x{h}")));
    }
    if color.dimensions() != (w, h) {
        return Err(Error::format(
            "render buffers",
            format!("color image is {:?}, buffers are {w}x{h}", color.dimensions()),
        ));
    }
    let n = (w * h) as usize;
    let uv_flat = read_f32s(&mut r, 2 * n)?;
    let mut tris = vec![0u32; n];
    r.read_u32_into::<LittleEndian>(&mut tris)
        .map_err(|e| Error::format("render buffers", format!("truncated: {e}")))?;
    let bary = read_f32s(&mut r, 3 * n)?;
    let depth = read_f32s(&mut r, n)?;
    let mut masks = vec![0u8; 2 * n];
    r.read_exact(&mut masks)
        .map_err(|e| Error::format("render buffers", format!("truncated: {e}")))?;
    let mut counters = [0u32; 4];
    r.read_u32_into::<LittleEndian>(&mut counters)
        .map_err(|e| Error::format("render buffers", format!("truncated: {e}")))?;
    Ok(RenderedFace {
        width: w,
        height: h,
        color,
        uv: uv_flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        attr: tris
            .iter()
            .zip(bary.chunks_exact(3))
            .map(|(&triangle, b)| PixelAttr {
                triangle,
                bary: [b[0], b[1], b[2]],
            })
            .collect(),
        depth,
        face_mask: masks[..n].iter().map(|&m| m != 0).collect(),
        occluder_mask: masks[n..].iter().map(|&m| m != 0).collect(),
        report: RenderReport {
            degenerate_triangles: counters[0] as usize,
            behind_camera_triangles: counters[1] as usize,
            backfacing_triangles: counters[2] as usize,
            all_behind_camera: counters[3] != 0,
        },
    })
}

/// Writes `<stem>.png` and `<stem>.dcrb`.
pub fn save_rendered(face: &RenderedFace, stem: &Path) -> Result<()> {
    face.color.save(stem.with_extension("png"))?;
    let mut w = BufWriter::new(File::create(stem.with_extension("dcrb"))?);
    write_buffers(face, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_rendered(stem: &Path) -> Result<RenderedFace> {
    let color = image::open(stem.with_extension("png"))?.to_rgb8();
    read_buffers(BufReader::new(File::open(stem.with_extension("dcrb"))?), color)
}
