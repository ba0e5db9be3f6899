use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Conv, Forward, Linear, Norm, NormUpdates};
use super::params::ParamVector;
use super::{EncoderSpec, Family, FeatureBatch};
use crate::data::{images_to_tensor, Image};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const INFER_CHUNK: usize = 256;

#[derive(Clone, Debug)]
struct ConvBlock {
    conv: Conv,
    norm: Option<Norm>,
    pool: bool,
}

#[derive(Clone, Debug)]
struct ResidualBlock {
    conv1: Conv,
    norm1: Option<Norm>,
    conv2: Conv,
    norm2: Option<Norm>,
    shortcut: Option<(Conv, Option<Norm>)>,
}

#[derive(Clone, Debug)]
enum Stage {
    Plain(ConvBlock),
    Residual(ResidualBlock),
}

/// Image encoder: convolutional trunk, global average pooling and an
/// optional linear output adapter.
#[derive(Clone, Debug)]
pub struct Encoder {
    spec: EncoderSpec,
    seed: u64,
    params: ParamVector,
    stages: Vec<Stage>,
    adapter: Option<Linear>,
    norm_frozen: bool,
}

/// (width, stride, pool-after) per plain stage of the small CNN.
const TINY_STAGES: [(usize, usize, bool); 3] = [(16, 2, true), (32, 1, true), (48, 1, false)];
/// Stem width and (width, stride) per residual stage. A final stride-2
/// stage of width `feature_dim` is appended.
const RESNET_SMALL: (usize, &[(usize, usize)]) = (16, &[(24, 1), (48, 2)]);
const RESNET_WIDE: (usize, &[(usize, usize)]) = (24, &[(32, 1), (64, 2), (96, 1)]);

impl Encoder {
    pub fn build(spec: &EncoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamVector::new();
        let bn = spec.batch_norm;
        let c_in = spec.input_shape.2;
        let d = spec.feature_dim;
        let norm = |ps: &mut ParamVector, name: &str, c| bn.then(|| Norm::new(ps, name, c));
        let mut stages = Vec::new();
        match spec.family {
            Family::TinyCnn => {
                let mut cin = c_in;
                let widths = TINY_STAGES.iter().copied().chain(std::iter::once((d, 1, false)));
                for (i, (w, stride, pool)) in widths.enumerate() {
                    let name = format!("features.{i}");
                    let conv = Conv::new(&mut ps, &mut rng, &format!("{name}.conv"), cin, w, 3, stride);
                    let norm = norm(&mut ps, &format!("{name}.bn"), w);
                    stages.push(Stage::Plain(ConvBlock { conv, norm, pool }));
                    cin = w;
                }
            }
            Family::ResnetSmall | Family::ResnetWide => {
                let (stem, blocks) = if spec.family == Family::ResnetSmall {
                    RESNET_SMALL
                } else {
                    RESNET_WIDE
                };
                let conv = Conv::new(&mut ps, &mut rng, "stem.conv", c_in, stem, 3, 2);
                let n = norm(&mut ps, "stem.bn", stem);
                stages.push(Stage::Plain(ConvBlock { conv, norm: n, pool: true }));
                let mut cin = stem;
                let all = blocks.iter().copied().chain(std::iter::once((d, 2)));
                for (i, (w, stride)) in all.enumerate() {
                    let name = format!("layer{}", i + 1);
                    let conv1 = Conv::new(&mut ps, &mut rng, &format!("{name}.conv1"), cin, w, 3, stride);
                    let norm1 = norm(&mut ps, &format!("{name}.bn1"), w);
                    let conv2 = Conv::new(&mut ps, &mut rng, &format!("{name}.conv2"), w, w, 3, 1);
                    let norm2 = norm(&mut ps, &format!("{name}.bn2"), w);
                    let shortcut = (stride != 1 || cin != w).then(|| {
                        let c = Conv::new(&mut ps, &mut rng, &format!("{name}.downsample.conv"), cin, w, 1, stride);
                        let n = norm(&mut ps, &format!("{name}.downsample.bn"), w);
                        (c, n)
                    });
                    stages.push(Stage::Residual(ResidualBlock {
                        conv1,
                        norm1,
                        conv2,
                        norm2,
                        shortcut,
                    }));
                    cin = w;
                }
            }
        }
        let adapter = spec
            .adapter_dim
            .map(|a| Linear::new(&mut ps, &mut rng, "adapter", d, a));
        Ok(Self {
            spec: spec.clone(),
            seed,
            params: ps,
            stages,
            adapter,
            norm_frozen: false,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
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

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn norm_frozen(&self) -> bool {
        self.norm_frozen
    }

    pub fn has_norm_layers(&self) -> bool {
        self.params.iter().any(|p| p.kind.is_norm())
    }

    /// Mark normalization affine parameters non-trainable and stop running
    /// statistics from updating; normalization then always uses stored
    /// statistics.
    pub fn freeze_batchnorm(mut self) -> Self {
        self.freeze_batchnorm_in_place();
        self
    }

    pub fn freeze_batchnorm_in_place(&mut self) {
        if !self.has_norm_layers() {
            return;
        }
        self.params.set_trainable_where(|p| p.kind.is_norm(), false);
        self.norm_frozen = true;
    }

    pub(crate) fn set_norm_frozen(&mut self, frozen: bool) {
        self.norm_frozen = frozen && self.has_norm_layers();
    }

    /// Batch-level forward pass over an `[N, C, H, W]` tensor.
    pub fn forward(&self, x: &Tensor, f: &mut Forward) -> Tensor {
        let frozen = self.norm_frozen;
        let mut h = x.clone();
        for stage in &self.stages {
            h = match stage {
                Stage::Plain(b) => {
                    let mut y = b.conv.forward(&h, f);
                    if let Some(n) = &b.norm {
                        y = n.forward(&y, f, frozen);
                    }
                    y = y.relu();
                    if b.pool {
                        y = y.max_pool2();
                    }
                    y
                }
                Stage::Residual(b) => {
                    let mut y = b.conv1.forward(&h, f);
                    if let Some(n) = &b.norm1 {
                        y = n.forward(&y, f, frozen);
                    }
                    y = b.conv2.forward(&y.relu(), f);
                    if let Some(n) = &b.norm2 {
                        y = n.forward(&y, f, frozen);
                    }
                    let skip = match &b.shortcut {
                        Some((c, n)) => {
                            let s = c.forward(&h, f);
                            match n {
                                Some(n) => n.forward(&s, f, frozen),
                                None => s,
                            }
                        }
                        None => h.clone(),
                    };
                    y.add(&skip).relu()
                }
            };
        }
        let pooled = h.global_avg_pool();
        match &self.adapter {
            Some(a) => a.forward(&pooled, f),
            None => pooled,
        }
    }

    /// Training-mode forward with gradient tracking on trainable parameters.
    /// Returns the output, the binding (for gradient extraction) and the
    /// normalization statistics to fold in after the step.
    pub fn forward_train(&self, x: &Tensor) -> (Tensor, super::Bound, NormUpdates) {
        let bound = self.params.bind(true);
        let mut f = Forward::new(&self.params, &bound, true);
        let out = self.forward(x, &mut f);
        let upd = f.into_updates();
        (out, bound, upd)
    }

    /// Forward pass with explicit normalization mode and gradient tracking.
    pub fn forward_with(&self, x: &Tensor, train: bool, track: bool) -> (Tensor, super::Bound, NormUpdates) {
        let bound = self.params.bind(track);
        let mut f = Forward::new(&self.params, &bound, train);
        let out = self.forward(x, &mut f);
        let upd = f.into_updates();
        (out, bound, upd)
    }

    /// Inference-mode forward. When `track` is set, trainable parameters are
    /// still bound as gradient leaves.
    pub fn forward_eval(&self, x: &Tensor, track: bool) -> (Tensor, super::Bound) {
        let bound = self.params.bind(track);
        let mut f = Forward::new(&self.params, &bound, false);
        let out = self.forward(x, &mut f);
        (out, bound)
    }

    /// Inference forward of an input that may itself carry gradients
    /// (e.g. a trigger), with parameters held constant.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        self.forward_eval(x, false).0
    }

    pub fn apply_norm_updates(&mut self, upd: NormUpdates) {
        if !self.norm_frozen {
            upd.apply(&mut self.params);
        }
    }

    pub(crate) fn check_input(&self, shape: &[usize]) -> Result<()> {
        let (h, w, c) = self.spec.input_shape;
        if shape.len() != 4 || shape[1] != c || shape[2] != h || shape[3] != w {
            return Err(Error::Input(format!(
                "batch shape {shape:?} does not match encoder input (H={h}, W={w}, C={c})"
            )));
        }
        Ok(())
    }

    /// Deterministic inference over a list of images.
    pub fn encode(&self, images: &[Image]) -> Result<FeatureBatch> {
        let d = self.output_dim();
        let mut data = Vec::with_capacity(images.len() * d);
        for chunk in images.chunks(INFER_CHUNK) {
            let x = images_to_tensor(chunk)?;
            data.extend_from_slice(self.encode_tensor(&x)?.data());
        }
        FeatureBatch::new(images.len(), d, data)
    }

    pub fn encode_tensor(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape())?;
        let out = self.apply(&x.detach());
        if out.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("encoder produced non-finite features".into()));
        }
        Ok(out)
    }

    /// Names of convolution weight parameters, in parameter order.
    pub fn conv_weight_indices(&self) -> Vec<usize> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.kind == super::ParamKind::ConvWeight)
            .map(|(i, _)| i)
            .collect()
    }
}
