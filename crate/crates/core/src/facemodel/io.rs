//! `DCMM` model container and its JSON mirror.
//!
//! Binary layout (little-endian): magic `DCMM`, version u32, V u32, K_id u32, K_exp u32,
//! mean f64[3V], identity basis f64[3V*K_id] (column-major), expression basis
//! f64[3V*K_exp], sigma_id f64[K_id], sigma_exp f64[K_exp], uv f64[2V], triangle count
//! u32 then u32[3T], landmark count u32 then per landmark a u32 name length, UTF-8 name
//! bytes and a u32 vertex index.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};

use super::MorphableModel;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"DCMM";
pub const MODEL_VERSION: u32 = 1;

pub fn write_model<W: Write>(model: &MorphableModel, mut w: W) -> Result<()> {
    let v = model.vertex_count();
    w.write_all(MODEL_MAGIC)?;
    w.write_u32::<LittleEndian>(MODEL_VERSION)?;
    w.write_u32::<LittleEndian>(v as u32)?;
    w.write_u32::<LittleEndian>(model.k_id() as u32)?;
    w.write_u32::<LittleEndian>(model.k_exp() as u32)?;
    let arrays = [
        model.mean_shape.as_slice(),
        model.identity_basis.as_slice(),
        model.expression_basis.as_slice(),
        model.sigma_id.as_slice(),
        model.sigma_exp.as_slice(),
    ];
    for a in arrays {
        for &x in a {
            w.write_f64::<LittleEndian>(x)?;
        }
    }
    for uv in &model.uv_coords {
        w.write_f64::<LittleEndian>(uv[0])?;
        w.write_f64::<LittleEndian>(uv[1])?;
    }
    w.write_u32::<LittleEndian>(model.triangles.len() as u32)?;
    for t in &model.triangles {
        for &i in t {
            w.write_u32::<LittleEndian>(i)?;
        }
    }
    w.write_u32::<LittleEndian>(model.landmark_indices.len() as u32)?;
    for (name, &idx) in &model.landmark_indices {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(idx)?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut out)
        .map_err(|e| Error::format("model", format!("truncated array: {e}")))?;
    Ok(out)
}

// Guards allocations driven by header fields.
const MAX_ELEMENTS: usize = 1 << 28;

pub fn read_model<R: Read>(mut r: R) -> Result<MorphableModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format("model", "missing magic"))?;
    if &magic != MODEL_MAGIC {
        return Err(Error::format("model", format!("bad magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != MODEL_VERSION {
        return Err(Error::format("model", format!("unsupported version {version}")));
    }
    let v = r.read_u32::<LittleEndian>()? as usize;
    let k_id = r.read_u32::<LittleEndian>()? as usize;
    let k_exp = r.read_u32::<LittleEndian>()? as usize;
    if 3 * v * (1 + k_id + k_exp) > MAX_ELEMENTS {
        return Err(Error::format("model", "header sizes are implausibly large"));
    }
    let mean = read_f64s(&mut r, 3 * v)?;
    let id = read_f64s(&mut r, 3 * v * k_id)?;
    let exp = read_f64s(&mut r, 3 * v * k_exp)?;
    let sigma_id = read_f64s(&mut r, k_id)?;
    let sigma_exp = read_f64s(&mut r, k_exp)?;
    let uv_flat = read_f64s(&mut r, 2 * v)?;
    let n_tri = r.read_u32::<LittleEndian>()? as usize;
    if n_tri > MAX_ELEMENTS {
        return Err(Error::format("model", "triangle count is implausibly large"));
    }
    let mut triangles = Vec::with_capacity(n_tri);
    for _ in 0..n_tri {
        triangles.push([
            r.read_u32::<LittleEndian>()?,
            r.read_u32::<LittleEndian>()?,
            r.read_u32::<LittleEndian>()?,
        ]);
    }
    let n_lm = r.read_u32::<LittleEndian>()? as usize;
    let mut landmark_indices = BTreeMap::new();
    for _ in 0..n_lm {
        let len = r.read_u32::<LittleEndian>()? as usize;
        if len > 4096 {
            return Err(Error::format("model", "landmark name too long"));
        }
        let mut bytes = vec![0u8; len];
        r.read_exact(&mut bytes)?;
        let name = String::from_utf8(bytes)
            .map_err(|_| Error::format("model", "landmark name is not UTF-8"))?;
        let idx = r.read_u32::<LittleEndian>()?;
        landmark_indices.insert(name, idx);
    }
    let model = MorphableModel {
        mean_shape: DVector::from_vec(mean),
        identity_basis: DMatrix::from_vec(3 * v, k_id, id),
        expression_basis: DMatrix::from_vec(3 * v, k_exp, exp),
        sigma_id: DVector::from_vec(sigma_id),
        sigma_exp: DVector::from_vec(sigma_exp),
        triangles,
        uv_coords: uv_flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        landmark_indices,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &MorphableModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Loads either the binary container or, for `.json` paths, the JSON mirror.
pub fn load_model(path: &Path) -> Result<MorphableModel> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path)?;
        return model_from_json(&text);
    }
    read_model(BufReader::new(File::open(path)?))
}

pub fn model_to_json(model: &MorphableModel) -> Result<String> {
    Ok(serde_json::to_string_pretty(&json::ModelJson::from(model))?)
}

pub fn model_from_json(text: &str) -> Result<MorphableModel> {
    let parsed: json::ModelJson = serde_json::from_str(text)?;
    let model = parsed.into_model()?;
    model.validate()?;
    Ok(model)
}

mod json {
    use super::*;
    use serde::{Deserialize, Serialize};

    /// Hand-editable schema: bases are lists of columns, each a flat `3V` list.
    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub(super) struct ModelJson {
        mean_shape: Vec<f64>,
        identity_basis: Vec<Vec<f64>>,
        expression_basis: Vec<Vec<f64>>,
        sigma_id: Vec<f64>,
        sigma_exp: Vec<f64>,
        uv_coords: Vec<[f64; 2]>,
        triangles: Vec<[u32; 3]>,
        landmarks: BTreeMap<String, u32>,
    }

    impl From<&MorphableModel> for ModelJson {
        fn from(m: &MorphableModel) -> Self {
            let cols = |b: &DMatrix<f64>| b.column_iter().map(|c| c.iter().copied().collect()).collect();
            ModelJson {
                mean_shape: m.mean_shape.iter().copied().collect(),
                identity_basis: cols(&m.identity_basis),
                expression_basis: cols(&m.expression_basis),
                sigma_id: m.sigma_id.iter().copied().collect(),
                sigma_exp: m.sigma_exp.iter().copied().collect(),
                uv_coords: m.uv_coords.clone(),
                triangles: m.triangles.clone(),
                landmarks: m.landmark_indices.clone(),
            }
        }
    }

    impl ModelJson {
        pub(super) fn into_model(self) -> Result<MorphableModel> {
            let n = self.mean_shape.len();
            let basis = |cols: Vec<Vec<f64>>, what: &'static str| -> Result<DMatrix<f64>> {
                if let Some(c) = cols.iter().find(|c| c.len() != n) {
                    return Err(Error::DimensionMismatch {
                        context: what,
                        expected: n,
                        actual: c.len(),
                    });
                }
                let k = cols.len();
                Ok(DMatrix::from_vec(n, k, cols.into_iter().flatten().collect()))
            };
            Ok(MorphableModel {
                identity_basis: basis(self.identity_basis, "identity basis column")?,
                expression_basis: basis(self.expression_basis, "expression basis column")?,
                mean_shape: DVector::from_vec(self.mean_shape),
                sigma_id: DVector::from_vec(self.sigma_id),
                sigma_exp: DVector::from_vec(self.sigma_exp),
                triangles: self.triangles,
                uv_coords: self.uv_coords,
                landmark_indices: self.landmarks,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facemodel::procedural::{generate, ProceduralConfig};

    fn model() -> MorphableModel {
        generate(&ProceduralConfig {
            n_azimuth: 11,
            n_elevation: 9,
            k_id: 3,
            k_exp: 2,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn binary_and_json_round_trip() {
        let m = model();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"DCMM");
        assert_eq!(read_model(buf.as_slice()).unwrap(), m);
        let text = model_to_json(&m).unwrap();
        assert_eq!(model_from_json(&text).unwrap(), m);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let m = model();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_model(bad.as_slice()).is_err());
        assert!(read_model(&buf[..buf.len() / 2]).is_err());
        let text = model_to_json(&m).unwrap().replace("\"sigma_id\"", "\"sigma_idx\"");
        assert!(model_from_json(&text).is_err());
    }
}
