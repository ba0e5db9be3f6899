//! Watermark embedding, extraction and verification.

mod embed;
mod key;
mod loss;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use embed::{embed, EmbedConfig, EmbedOutcome, StepLosses};
pub use key::{extract, verify, watermark_rate, watermark_rate_of, KeyTuple};
pub use loss::{corr_from_decoded, corr_loss, key_cosines, match_from_features, match_loss, uncorr_from_decoded, uncorr_loss};

use crate::data::Image;
use crate::error::{ensure, Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::tensor::Tensor;

pub const DEFAULT_COVERAGE: f32 = 0.35;
pub const DEFAULT_TH_W: f32 = 0.5;
pub const DEFAULT_TH_V: f32 = 0.5;

/// Image-shaped pattern with values in `[0, 1]`, stored CHW.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    /// (H, W, C)
    pub shape: (usize, usize, usize),
    pub data: Vec<f32>,
}

impl Trigger {
    /// Uniform random initialization.
    pub fn random(shape: (usize, usize, usize), seed: u64) -> Self {
        let mut rng = rng_from(derive_seed(seed, &["trigger", "init"]));
        let n = shape.0 * shape.1 * shape.2;
        Self {
            shape,
            data: (0..n).map(|_| rng.gen::<f32>()).collect(),
        }
    }

    pub fn from_data(shape: (usize, usize, usize), data: Vec<f32>) -> Result<Self> {
        ensure!(data.len() == shape.0 * shape.1 * shape.2, Input, "trigger buffer size mismatch");
        Ok(Self { shape, data })
    }

    pub fn clamp01(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    pub(crate) fn to_tensor(&self, track: bool) -> Tensor {
        let (h, w, c) = self.shape;
        if track {
            Tensor::param(self.data.clone(), &[c, h, w])
        } else {
            Tensor::new(self.data.clone(), &[c, h, w])
        }
    }
}

/// Binary placement map, replicated across channels, stored CHW.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub shape: (usize, usize, usize),
    pub side: usize,
    pub data: Vec<f32>,
}

impl Mask {
    pub fn coverage(&self) -> f32 {
        self.data.iter().sum::<f32>() / self.data.len() as f32
    }
}

/// Square bottom-right patch of side `round(sqrt(coverage * H * W))`.
pub fn make_mask(shape: (usize, usize, usize), coverage: f32) -> Result<Mask> {
    ensure!(coverage > 0.0 && coverage <= 1.0, Config, "mask coverage must be in (0, 1], got {coverage}");
    let (h, w, c) = shape;
    let side = (coverage as f64 * (h * w) as f64).sqrt().round() as usize;
    ensure!(side <= h.min(w), Config, "coverage {coverage} needs a {side}x{side} patch, image is {h}x{w}");
    ensure!(side > 0, Config, "coverage {coverage} rounds to an empty patch");
    let mut data = vec![0.0f32; c * h * w];
    for ch in 0..c {
        for y in h - side..h {
            for x in w - side..w {
                data[(ch * h + y) * w + x] = 1.0;
            }
        }
    }
    Ok(Mask { shape, side, data })
}

/// `P(x, T) = (1 - M) * x + M * T`.
pub fn apply_trigger(x: &Image, trigger: &Trigger, mask: &Mask) -> Result<Image> {
    ensure!(
        x.shape() == trigger.shape && trigger.shape == mask.shape,
        Input,
        "shape mismatch: image {:?}, trigger {:?}, mask {:?}",
        x.shape(),
        trigger.shape,
        mask.shape
    );
    let data = x
        .data()
        .iter()
        .zip(&trigger.data)
        .zip(&mask.data)
        .map(|((&v, &t), &m)| (1.0 - m) * v + m * t)
        .collect();
    Image::from_chw(x.height, x.width, x.channels, data)
}

/// Seeded unit-norm secret key of dimension `m`.
pub fn sample_sk(m: usize, seed: u64) -> Result<Vec<f32>> {
    ensure!(m >= 8, Config, "secret key dimension must be at least 8, got {m}");
    let mut rng = rng_from(derive_seed(seed, &["sk"]));
    let raw: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Numeric("degenerate secret key draw".into()));
    }
    Ok(raw.iter().map(|v| (v / norm) as f32).collect())
}

#[cfg(test)]
mod tests;
