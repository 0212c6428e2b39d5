//! `DCFL` flow files and the on-disk pair layout.
//!
//! `DCFL` (little-endian): magic `DCFL`, version u32, W u32, H u32, flow f32[2N]
//! interleaved `(dx, dy)`, mask u8[N] holding `round(255 * m)`.
//!
//! Pairs live in `<root>/pairs/NNNNNN/{source.png,target.png,gt.dcfl}` with a
//! `<root>/manifest.txt` of `NNNNNN provenance` lines.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{FlowField, MatchabilityMask, PairMeta, TrainingPair};
use crate::error::{Error, Result};

pub const FLOW_MAGIC: &[u8; 4] = b"DCFL";
pub const FLOW_VERSION: u32 = 1;
const MAX_SIDE: u32 = 1 << 14;

pub fn write_flow<W: Write>(flow: &FlowField, mask: &MatchabilityMask, mut w: W) -> Result<()> {
    if (flow.width, flow.height) != (mask.width, mask.height) {
        return Err(Error::DimensionMismatch {
            context: "flow/mask pixel count",
            expected: flow.data.len(),
            actual: mask.data.len(),
        });
    }
    w.write_all(FLOW_MAGIC)?;
    w.write_u32::<LittleEndian>(FLOW_VERSION)?;
    w.write_u32::<LittleEndian>(flow.width)?;
    w.write_u32::<LittleEndian>(flow.height)?;
    for f in &flow.data {
        w.write_f32::<LittleEndian>(f[0])?;
        w.write_f32::<LittleEndian>(f[1])?;
    }
    let bytes: Vec<u8> = mask.data.iter().map(|&m| (m.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_flow<R: Read>(mut r: R) -> Result<(FlowField, MatchabilityMask)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::format("flow", "missing magic"))?;
    if &magic != FLOW_MAGIC {
        return Err(Error::format("flow", format!("bad magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FLOW_VERSION {
        return Err(Error::format("flow", format!("unsupported version {version}")));
    }
    let w = r.read_u32::<LittleEndian>()?;
    let h = r.read_u32::<LittleEndian>()?;
    if w == 0 || h == 0 || w > MAX_SIDE || h > MAX_SIDE {
        return Err(Error::format("flow", format!("implausible size {w}x{h}")));
    }
    let n = (w * h) as usize;
    let mut flat = vec![0f32; 2 * n];
    r.read_f32_into::<LittleEndian>(&mut flat)
        .map_err(|e| Error::format("flow", format!("truncated flow plane: {e}")))?;
    let mut bytes = vec![0u8; n];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::format("flow", format!("truncated mask plane: {e}")))?;
    Ok((
        FlowField {
            width: w,
            height: h,
            data: flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        },
        MatchabilityMask {
            width: w,
            height: h,
            data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        },
    ))
}

pub fn save_flow(flow: &FlowField, mask: &MatchabilityMask, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_flow(flow, mask, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_flow(path: &Path) -> Result<(FlowField, MatchabilityMask)> {
    read_flow(BufReader::new(File::open(path)?))
}

pub fn pair_dir(root: &Path, index: usize) -> PathBuf {
    root.join("pairs").join(format!("{index:06}"))
}

/// Writes one pair directory plus its `meta.json`; the manifest is written separately.
pub fn save_pair(root: &Path, index: usize, pair: &TrainingPair) -> Result<()> {
    let dir = pair_dir(root, index);
    fs::create_dir_all(&dir)?;
    pair.source.save(dir.join("source.png"))?;
    pair.target.save(dir.join("target.png"))?;
    save_flow(&pair.gt_flow, &pair.gt_mask, &dir.join("gt.dcfl"))?;
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&pair.meta)?)?;
    Ok(())
}

pub fn load_pair(root: &Path, index: usize) -> Result<TrainingPair> {
    let dir = pair_dir(root, index);
    let source = image::open(dir.join("source.png"))?.to_rgb8();
    let target = image::open(dir.join("target.png"))?.to_rgb8();
    let (gt_flow, gt_mask) = load_flow(&dir.join("gt.dcfl"))?;
    let meta: PairMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    if source.dimensions() != (gt_flow.width, gt_flow.height) || target.dimensions() != source.dimensions() {
        return Err(Error::Data(format!("pair {index}: image and flow sizes disagree")));
    }
    Ok(TrainingPair {
        source,
        target,
        gt_flow,
        gt_mask,
        meta,
    })
}

pub fn write_manifest(root: &Path, entries: &[(usize, &str)]) -> Result<()> {
    let mut text = String::new();
    for (i, prov) in entries {
        text.push_str(&format!("{i:06} {prov}\n"));
    }
    fs::write(root.join("manifest.txt"), text)?;
    Ok(())
}

pub fn read_manifest(root: &Path) -> Result<Vec<(usize, String)>> {
    let f = BufReader::new(File::open(root.join("manifest.txt"))?);
    let mut out = Vec::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let bad = || Error::format("manifest", format!("line {}: {line:?}", n + 1));
        let idx = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let prov = parts.next().ok_or_else(bad)?;
        if !matches!(prov, "synthetic" | "imported") {
            return Err(bad());
        }
        out.push((idx, prov.to_string()));
    }
    Ok(out)
}

/// Loads every pair listed in the manifest, in manifest order.
pub fn load_pair_set(root: &Path) -> Result<Vec<TrainingPair>> {
    read_manifest(root)?.into_iter().map(|(i, _)| load_pair(root, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{build_synthetic_set, Stage};
    use crate::facemodel::procedural::{generate, ProceduralConfig};
    use crate::raster::DataGenConfig;

    #[test]
    fn flow_file_round_trip() {
        let flow = FlowField {
            width: 3,
            height: 2,
            data: vec![[0.5, -1.0], [2.0, 3.25], [0.0, 0.0], [-7.0, 1.5], [1e-3, 4.0], [9.0, -9.0]],
        };
        let mask = MatchabilityMask {
            width: 3,
            height: 2,
            data: vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0],
        };
        let mut buf = Vec::new();
        write_flow(&flow, &mask, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"DCFL");
        assert_eq!(buf.len(), 16 + 6 * 8 + 6);
        assert_eq!(read_flow(buf.as_slice()).unwrap(), (flow, mask));
        assert!(read_flow(&buf[..20]).is_err());
    }

    #[test]
    fn pair_directory_round_trip() {
        let model = generate(&ProceduralConfig::default()).unwrap();
        let cfg = DataGenConfig {
            image_size: 32,
            ..Default::default()
        };
        let set = build_synthetic_set(&model, &cfg, Stage::Pretrain, &[]).unwrap();
        let pairs = set.generate(0, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for (i, p) in pairs.iter().enumerate() {
            save_pair(dir.path(), i, p).unwrap();
        }
        write_manifest(dir.path(), &[(0, "synthetic"), (1, "synthetic")]).unwrap();
        assert_eq!(load_pair_set(dir.path()).unwrap(), pairs);
    }
}
