//! Flat parameter vector, initialization and the `DCWT` weights file.
//!
//! File layout (little-endian): magic `DCWT`, version u32, spec JSON length u32,
//! spec JSON bytes, parameter count u32, then `f32` parameters in layer-table order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NetError, Result};
use crate::layers::Real;
use crate::spec::{Branch, LayerKind, NetworkSpec};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"DCWT";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub spec: NetworkSpec,
    pub params: Vec<T>,
}

impl<T: Real> Weights<T> {
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Weights {
            spec: spec.clone(),
            params: vec![T::zero(); spec.param_count()],
        })
    }

    /// He initialization: weights `N(0, 2 / fan_in)`, biases zero. A transposed
    /// 4x4 stride-2 kernel feeds each output from `cin * 4` inputs.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in spec.layers() {
            let taps = l.geom.k * l.geom.k / if l.kind == LayerKind::Deconv { l.geom.stride * l.geom.stride } else { 1 };
            let fan_in = (l.cin * taps) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            for p in &mut w.params[l.offset..l.offset + l.weight_len()] {
                *p = T::from_f64(normal.sample(&mut rng));
            }
        }
        Ok(w)
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Weights<U> {
        Weights {
            spec: self.spec.clone(),
            params: self.params.iter().map(|p| U::from_f64(p.as_f64())).collect(),
        }
    }

    /// Converts shared-encoder weights into the two-encoder layout, copying the
    /// shared encoder into both branches. Already unshared weights are returned as is.
    pub fn unshare(&self) -> Weights<T> {
        if !self.spec.share_encoders {
            return self.clone();
        }
        let spec = self.spec.unshared();
        let src_layers = self.spec.layers();
        let encoder: Vec<_> = src_layers.iter().filter(|l| l.branch == Branch::EncoderA).collect();
        let mut params = Vec::with_capacity(spec.param_count());
        for l in spec.layers() {
            let from = match l.branch {
                Branch::EncoderA | Branch::EncoderB => {
                    let idx = spec.layers().iter().filter(|m| m.branch == l.branch).position(|m| m.name == l.name).unwrap();
                    encoder[idx]
                }
                _ => src_layers.iter().find(|m| m.name == l.name).unwrap(),
            };
            params.extend_from_slice(&self.params[from.offset..from.offset + from.param_len()]);
        }
        Weights { spec, params }
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let spec = serde_json::to_vec(&self.spec)?;
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_u32::<LittleEndian>(WEIGHTS_VERSION)?;
        w.write_u32::<LittleEndian>(spec.len() as u32)?;
        w.write_all(&spec)?;
        w.write_u32::<LittleEndian>(self.params.len() as u32)?;
        for p in &self.params {
            w.write_f32::<LittleEndian>(p.as_f64() as f32)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| NetError::Format("missing magic".into()))?;
        if &magic != WEIGHTS_MAGIC {
            return Err(NetError::Format(format!("bad magic {magic:?}")));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != WEIGHTS_VERSION {
            return Err(NetError::Format(format!("unsupported version {version}")));
        }
        let len = r.read_u32::<LittleEndian>()? as usize;
        if len > 1 << 16 {
            return Err(NetError::Format("spec header is implausibly large".into()));
        }
        let mut spec = vec![0u8; len];
        r.read_exact(&mut spec)?;
        let spec: NetworkSpec = serde_json::from_slice(&spec)?;
        spec.validate()?;
        let n = r.read_u32::<LittleEndian>()? as usize;
        if n != spec.param_count() {
            return Err(NetError::Format(format!("spec needs {} parameters, file holds {n}", spec.param_count())));
        }
        let mut raw = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut raw)
            .map_err(|e| NetError::Format(format!("truncated parameters: {e}")))?;
        let w = Weights {
            spec,
            params: raw.into_iter().map(|p| T::from_f64(p as f64)).collect(),
        };
        if !w.all_finite() {
            return Err(NetError::Format("parameters are not finite".into()));
        }
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
