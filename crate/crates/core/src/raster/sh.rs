//! Order-2 spherical-harmonics irradiance.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const Y00: f64 = 0.282_094_791_773_878_1;
const Y1: f64 = 0.488_602_511_902_919_9;
const Y2: f64 = 1.092_548_430_592_079_2;
const Y20: f64 = 0.315_391_565_252_520_05;
const Y22: f64 = 0.546_274_215_296_039_6;

/// Cosine-lobe convolution weights divided by pi, per band.
const BAND_WEIGHT: [f64; 3] = [1.0, 2.0 / 3.0, 0.25];

pub const BANK_SIZE: usize = 16;
const BANK_SEED: u64 = 0x5348_4241_4e4b;

/// The nine real SH basis functions at unit direction `n`.
pub fn sh_basis(n: &Vector3<f64>) -> [f64; 9] {
    let (x, y, z) = (n.x, n.y, n.z);
    [
        Y00,
        Y1 * y,
        Y1 * z,
        Y1 * x,
        Y2 * x * y,
        Y2 * y * z,
        Y20 * (3.0 * z * z - 1.0),
        Y2 * x * z,
        Y22 * (x * x - y * y),
    ]
}

fn band(k: usize) -> usize {
    match k {
        0 => 0,
        1..=3 => 1,
        _ => 2,
    }
}

/// Irradiance coefficients per color channel: `E_c(n) = sum_k coeffs[c][k] * Y_k(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightingSH {
    pub coeffs: [[f64; 9]; 3],
}

impl LightingSH {
    /// Uniform unit irradiance: only the DC coefficient is set.
    pub fn flat() -> Self {
        let mut coeffs = [[0.0; 9]; 3];
        for c in &mut coeffs {
            c[0] = 1.0 / Y00;
        }
        LightingSH { coeffs }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().flatten().all(|c| c.is_finite())
    }

    pub fn add_ambient(&mut self, rgb: [f64; 3]) {
        for (c, a) in self.coeffs.iter_mut().zip(rgb) {
            c[0] += a / Y00;
        }
    }

    /// Adds a distant light arriving from unit direction `toward_light`.
    pub fn add_directional(&mut self, toward_light: &Vector3<f64>, rgb: [f64; 3]) {
        let y = sh_basis(&toward_light.normalize());
        for (c, intensity) in self.coeffs.iter_mut().zip(rgb) {
            for k in 0..9 {
                c[k] += std::f64::consts::PI * BAND_WEIGHT[band(k)] * intensity * y[k];
            }
        }
    }

    pub fn irradiance(&self, n: &Vector3<f64>) -> [f64; 3] {
        let y = sh_basis(n);
        let mut out = [0.0; 3];
        for (o, c) in out.iter_mut().zip(&self.coeffs) {
            *o = c.iter().zip(&y).map(|(a, b)| a * b).sum();
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = *self;
        out.coeffs.iter_mut().flatten().for_each(|c| *c *= s);
        out
    }

    /// `self + t * (other - self)`.
    pub fn lerp(&self, other: &Self, t: f64) -> Self {
        let mut out = *self;
        for (o, b) in out.coeffs.iter_mut().flatten().zip(other.coeffs.iter().flatten()) {
            *o += t * (b - *o);
        }
        out
    }
}

/// Sixteen fixed environments mixing ambient light with one or two colored
/// directional lights, mostly from the camera hemisphere.
pub fn lighting_bank() -> Vec<LightingSH> {
    let mut rng = ChaCha8Rng::seed_from_u64(BANK_SEED);
    (0..BANK_SIZE)
        .map(|_| {
            let mut sh = LightingSH { coeffs: [[0.0; 9]; 3] };
            let ambient = rng.gen_range(0.25..0.55);
            sh.add_ambient([ambient; 3]);
            let n_lights = rng.gen_range(1..=2);
            for _ in 0..n_lights {
                let dir = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..0.6),
                    rng.gen_range(-1.0..-0.2),
                );
                let strength = rng.gen_range(0.5..0.9) / n_lights as f64;
                let tint = [
                    strength * rng.gen_range(0.85..1.1),
                    strength * rng.gen_range(0.85..1.05),
                    strength * rng.gen_range(0.8..1.05),
                ];
                sh.add_directional(&dir, tint);
            }
            sh
        })
        .collect()
}
