use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ConvWeight,
    LinearWeight,
    Bias,
    NormScale,
    NormShift,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Buffers are state, never touched by an optimizer.
    pub fn is_buffer(self) -> bool {
        matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    pub fn is_norm(self) -> bool {
        matches!(
            self,
            ParamKind::NormScale | ParamKind::NormShift | ParamKind::RunningMean | ParamKind::RunningVar
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub trainable: bool,
}

/// Ordered, named view over every parameter and buffer of a network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamVector {
    params: Vec<Param>,
}

/// Per-parameter gradients aligned with a [`ParamVector`].
pub type ParamGrads = Vec<Option<Vec<f32>>>;

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push(&mut self, name: String, kind: ParamKind, shape: Vec<usize>, data: Vec<f32>) -> usize {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        debug_assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            trainable: !kind.is_buffer(),
            kind,
            shape,
            data,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Total scalar count, buffers included.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn trainable_numel(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.data.len())
            .sum()
    }

    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.numel());
        for p in &self.params {
            out.extend_from_slice(&p.data);
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[f32]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(Error::Input(format!(
                "flat parameter vector has {} values, network expects {}",
                flat.len(),
                self.numel()
            )));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.data.len();
            p.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Little-endian `f32` encoding of [`flatten`](Self::flatten).
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.numel() * 4);
        for p in &self.params {
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// SHA-256 over the little-endian parameter bytes.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_le_bytes()))
    }

    /// Every value is finite.
    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    /// Materialize the parameters as graph leaves. Trainable parameters
    /// become gradient-tracking leaves when `track` is set.
    pub fn bind(&self, track: bool) -> Bound {
        Bound {
            tensors: self
                .params
                .iter()
                .map(|p| {
                    if track && p.trainable {
                        Tensor::param(p.data.clone(), &p.shape)
                    } else {
                        Tensor::new(p.data.clone(), &p.shape)
                    }
                })
                .collect(),
        }
    }

    pub fn set_trainable_where(&mut self, pred: impl Fn(&Param) -> bool, trainable: bool) {
        for p in &mut self.params {
            if !p.kind.is_buffer() && pred(p) {
                p.trainable = trainable;
            }
        }
    }
}

/// Graph leaves for one forward pass.
pub struct Bound {
    tensors: Vec<Tensor>,
}

impl Bound {
    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    /// Pull this binding's gradients out of a backward result.
    pub fn grads(&self, grads: &mut Gradients) -> ParamGrads {
        self.tensors.iter().map(|t| grads.take(t)).collect()
    }
}
