use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nets::{Decoder, Encoder};
use crate::data::Image;
use crate::wm::key_cosines;

/// Density of the angle between two independent uniformly random
/// directions in `R^n`.
pub fn angle_pdf(theta: f64, n: usize) -> Result<f64> {
    ensure!((0.0..=PI).contains(&theta), Input, "angle {theta} outside [0, pi]");
    ensure!(n >= 2, Input, "dimension must be at least 2, got {n}");
    let nf = n as f64;
    let log_norm = libm::lgamma(nf / 2.0) - libm::lgamma((nf - 1.0) / 2.0) - 0.5 * PI.ln();
    if n == 2 {
        return Ok(log_norm.exp());
    }
    let s = theta.sin();
    if s <= 0.0 {
        return Ok(0.0);
    }
    Ok((log_norm + (nf - 2.0) * s.ln()).exp())
}

pub const HIST_BIN_WIDTH: f64 = 0.05;

/// Counts over `[-1, 1]` in fixed-width bins; the value 1 falls in the last bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lower: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn empty() -> Self {
        let bins = (2.0 / HIST_BIN_WIDTH).round() as usize;
        Self {
            lower: (0..bins).map(|i| -1.0 + i as f64 * HIST_BIN_WIDTH).collect(),
            counts: vec![0; bins],
        }
    }

    pub fn add(&mut self, v: f32) {
        let bins = self.counts.len();
        let i = ((v as f64 + 1.0) / HIST_BIN_WIDTH).floor();
        let i = (i.max(0.0) as usize).min(bins - 1);
        self.counts[i] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Fraction of the mass in bins starting at or above `at`.
    pub fn mass_above(&self, at: f64) -> f64 {
        let hi: u64 = self
            .lower
            .iter()
            .zip(&self.counts)
            .filter(|(l, _)| **l >= at - 1e-9)
            .map(|(_, c)| c)
            .sum();
        hi as f64 / self.total().max(1) as f64
    }

    pub fn to_csv(&self, label: &str) -> String {
        let mut out = String::new();
        for (l, c) in self.lower.iter().zip(&self.counts) {
            writeln!(out, "{label},{l:.2},{:.2},{c}", l + HIST_BIN_WIDTH).expect("string write");
        }
        out
    }
}

/// Histogram of `cos(G(E(x_v)), v)` over every verification image and
/// every reference vector.
pub fn similarity_histogram(encoder: &Encoder, decoder: &Decoder, verification: &[Image], references: &[Vec<f32>]) -> Result<Histogram> {
    ensure!(!verification.is_empty(), Input, "no verification images");
    ensure!(!references.is_empty(), Input, "no reference vectors");
    let decoded = decoder.decode(&encoder.encode(verification)?)?.to_tensor();
    let width = decoded.dims2().1;
    let mut hist = Histogram::empty();
    for v in references {
        ensure!(v.len() == width, Input, "reference width {} differs from decoded width {width}", v.len());
        for c in key_cosines(&decoded, v).to_vec() {
            hist.add(c);
        }
    }
    Ok(hist)
}
