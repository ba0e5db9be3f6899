use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Forward, Linear};
use super::params::{Bound, ParamVector};
use super::{Activation, DecoderSpec, FeatureBatch};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fully connected network; the activation is applied between layers only.
#[derive(Clone, Debug)]
pub struct Mlp {
    spec: DecoderSpec,
    seed: u64,
    params: ParamVector,
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn build(spec: &DecoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamVector::new();
        let mut din = spec.input_dim;
        let layers = spec
            .layer_widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let l = Linear::new(&mut params, &mut rng, &format!("fc{i}"), din, w);
                din = w;
                l
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            seed,
            params,
            layers,
        })
    }

    pub fn spec(&self) -> &DecoderSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn forward(&self, x: &Tensor, f: &mut Forward) -> Tensor {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h, f);
            if i != last && self.spec.activation == Activation::Relu {
                h = h.relu();
            }
        }
        h
    }

    /// Forward with gradient-tracking parameters.
    pub fn forward_tracked(&self, x: &Tensor) -> (Tensor, Bound) {
        let bound = self.params.bind(true);
        let mut f = Forward::new(&self.params, &bound, true);
        let out = self.forward(x, &mut f);
        (out, bound)
    }

    /// Forward with constant parameters (input gradients still flow).
    pub fn apply(&self, x: &Tensor) -> Tensor {
        let bound = self.params.bind(false);
        let mut f = Forward::new(&self.params, &bound, false);
        self.forward(x, &mut f)
    }

    pub fn check_input(&self, dim: usize) -> Result<()> {
        if dim != self.input_dim() {
            return Err(Error::Input(format!(
                "feature width {dim} does not match network input width {}",
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// The watermark decoder: maps encoder features to decoded keys.
#[derive(Clone, Debug)]
pub struct Decoder(pub Mlp);

impl Decoder {
    pub fn build(spec: &DecoderSpec, seed: u64) -> Result<Self> {
        Mlp::build(spec, seed).map(Decoder)
    }

    pub fn mlp(&self) -> &Mlp {
        &self.0
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.0
    }

    pub fn key_dim(&self) -> usize {
        self.0.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.0.input_dim()
    }

    pub fn decode(&self, features: &FeatureBatch) -> Result<FeatureBatch> {
        self.0.check_input(features.dim())?;
        let out = self.0.apply(&features.to_tensor());
        if out.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("decoder produced non-finite keys".into()));
        }
        Ok(FeatureBatch::from_tensor(&out))
    }
}
