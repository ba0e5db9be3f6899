//! Encoder, decoder and head architectures with flat parameter handling.

mod checkpoint;
mod encoder;
mod layers;
mod mlp;
mod params;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointManifest, ModelSpec, ParamEntry};
pub use encoder::Encoder;
pub use layers::{Forward, NormUpdates};
pub use mlp::{Decoder, Mlp};
pub use params::{Bound, Param, ParamGrads, ParamKind, ParamVector};

use crate::error::{ensure, Error, Result};
use crate::tensor::Tensor;

/// Desk-scale encoder families, ordered by capacity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    TinyCnn,
    ResnetSmall,
    ResnetWide,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::TinyCnn => "tiny-cnn",
            Family::ResnetSmall => "resnet-small",
            Family::ResnetWide => "resnet-wide",
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub family: Family,
    /// (H, W, C)
    #[serde(default = "default_input")]
    pub input_shape: (usize, usize, usize),
    pub feature_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter_dim: Option<usize>,
    #[serde(default = "default_true")]
    pub batch_norm: bool,
}

pub const DEFAULT_INPUT: (usize, usize, usize) = (32, 32, 3);

fn default_input() -> (usize, usize, usize) {
    DEFAULT_INPUT
}
pub const DEFAULT_FEATURE_DIM: usize = 64;

impl EncoderSpec {
    pub fn new(family: Family, feature_dim: usize) -> Self {
        Self {
            family,
            input_shape: DEFAULT_INPUT,
            feature_dim,
            adapter_dim: None,
            batch_norm: true,
        }
    }

    pub fn with_adapter(mut self, dim: usize) -> Self {
        self.adapter_dim = Some(dim);
        self
    }

    pub fn output_dim(&self) -> usize {
        self.adapter_dim.unwrap_or(self.feature_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.input_shape;
        ensure!(h >= 8 && w >= 8, Config, "input must be at least 8x8, got {h}x{w}");
        ensure!(c >= 1, Config, "input needs at least one channel");
        ensure!(self.feature_dim >= 8, Config, "feature_dim must be >= 8, got {}", self.feature_dim);
        if let Some(a) = self.adapter_dim {
            ensure!(a >= 1, Config, "adapter_dim must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// Multi-layer perceptron layout. The last width is the output width.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub input_dim: usize,
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
}

pub const DEFAULT_KEY_DIM: usize = 128;

impl DecoderSpec {
    /// Hidden widths 512 and 256 scaled by `feature_dim / 512`, output `key_dim`.
    pub fn scaled(feature_dim: usize, key_dim: usize) -> Self {
        let h1 = (512 * feature_dim / 512).max(1);
        let h2 = (256 * feature_dim / 512).max(1);
        Self {
            input_dim: feature_dim,
            layer_widths: vec![h1, h2, key_dim],
            activation: Activation::Relu,
        }
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap_or(&self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.input_dim > 0, Config, "decoder input width must be positive");
        ensure!(!self.layer_widths.is_empty(), Config, "decoder needs at least one layer");
        ensure!(
            self.layer_widths.iter().all(|&w| w > 0),
            Config,
            "decoder widths must be positive: {:?}",
            self.layer_widths
        );
        Ok(())
    }
}

/// Row-major `[rows, dim]` feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBatch {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureBatch {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Input(format!(
                "feature data has {} values, expected {rows} x {dim}",
                data.len()
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let (rows, dim) = t.dims2();
        Self {
            rows,
            dim,
            data: t.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.dim)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.data.clone(), &[self.rows, self.dim])
    }

    pub fn select(&self, idx: &[usize]) -> FeatureBatch {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        FeatureBatch {
            rows: idx.len(),
            dim: self.dim,
            data,
        }
    }

    pub fn scaled(&self, k: f32) -> FeatureBatch {
        FeatureBatch {
            rows: self.rows,
            dim: self.dim,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }
}

#[cfg(test)]
mod tests;
