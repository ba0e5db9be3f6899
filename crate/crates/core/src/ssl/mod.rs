//! Self-supervised pretraining: SimCLR, MoCo v2 and BYOL.

mod augment;
mod loss;

use serde::{Deserialize, Serialize};

pub use augment::{augment_pair, AugmentationPolicy};
pub use loss::{byol_branch_loss, moco_loss, ntxent_loss, FeatureQueue};

use crate::data::{images_to_tensor, minibatches, Dataset, Image};
use crate::error::{ensure, Error, Result};
use crate::nets::{Activation, Bound, DecoderSpec, Encoder, EncoderSpec, Mlp, NormUpdates, ParamGrads};
use crate::optim::{ema_update, Optimizer, Sgd};
use crate::rng::{derive_seed, item_seed, rng_from};
use crate::tensor::{Gradients, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Simclr,
    MocoV2,
    Byol,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SslConfig {
    pub algorithm: Algorithm,
    pub temperature: f32,
    pub queue_size: usize,
    /// Key-encoder EMA coefficient (MoCo).
    pub momentum: f32,
    /// Target-network EMA coefficient (BYOL).
    pub byol_decay: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub sgd_momentum: f32,
    pub weight_decay: f32,
    pub augmentation: AugmentationPolicy,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Simclr,
            temperature: 0.5,
            queue_size: 512,
            momentum: 0.99,
            byol_decay: 0.99,
            epochs: 20,
            batch_size: 64,
            lr: 0.05,
            sgd_momentum: 0.9,
            weight_decay: 5e-4,
            augmentation: AugmentationPolicy::default(),
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.temperature > 0.0, Config, "temperature must be positive");
        ensure!(self.lr > 0.0, Config, "learning rate must be positive");
        ensure!(self.batch_size >= 2, Config, "batch_size must be at least 2");
        ensure!(
            self.queue_size > 0 && self.queue_size % self.batch_size == 0,
            Config,
            "queue_size {} must be a positive multiple of batch_size {}",
            self.queue_size,
            self.batch_size
        );
        ensure!((0.0..1.0).contains(&self.momentum), Config, "momentum must be in [0, 1)");
        ensure!((0.0..=1.0).contains(&self.byol_decay), Config, "byol_decay must be in [0, 1]");
        ensure!((0.0..1.0).contains(&self.sgd_momentum), Config, "sgd_momentum must be in [0, 1)");
        ensure!(self.weight_decay >= 0.0, Config, "weight_decay must be non-negative");
        self.augmentation.validate()
    }
}

/// Two-layer projection head: `d -> d -> d/2`.
pub fn projection_head(feature_dim: usize, seed: u64) -> Result<Mlp> {
    Mlp::build(
        &DecoderSpec {
            input_dim: feature_dim,
            layer_widths: vec![feature_dim, (feature_dim / 2).max(1)],
            activation: Activation::Relu,
        },
        seed,
    )
}

/// BYOL predictor: `d/2 -> d -> d/2`.
pub fn predictor_head(feature_dim: usize, seed: u64) -> Result<Mlp> {
    let p = (feature_dim / 2).max(1);
    Mlp::build(
        &DecoderSpec {
            input_dim: p,
            layer_widths: vec![feature_dim, p],
            activation: Activation::Relu,
        },
        seed,
    )
}

/// An encoder followed by a chain of MLP heads.
#[derive(Clone, Debug)]
pub struct Stack {
    pub encoder: Encoder,
    pub heads: Vec<Mlp>,
}

pub struct StackBinding {
    encoder: Bound,
    heads: Vec<Bound>,
    updates: NormUpdates,
}

pub struct StackGrads {
    encoder: ParamGrads,
    heads: Vec<ParamGrads>,
}

impl Stack {
    pub fn new(encoder: Encoder, heads: Vec<Mlp>) -> Self {
        Self { encoder, heads }
    }

    pub fn forward(&self, x: &Tensor, train: bool, track: bool) -> (Tensor, StackBinding) {
        let (mut h, eb, updates) = self.encoder.forward_with(x, train, track);
        let mut hb = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let bound = head.params().bind(track);
            let mut f = crate::nets::Forward::new(head.params(), &bound, train);
            h = head.forward(&h, &mut f);
            hb.push(bound);
        }
        (
            h,
            StackBinding {
                encoder: eb,
                heads: hb,
                updates,
            },
        )
    }

    pub fn grads(binding: &StackBinding, g: &mut Gradients) -> StackGrads {
        StackGrads {
            encoder: binding.encoder.grads(g),
            heads: binding.heads.iter().map(|b| b.grads(g)).collect(),
        }
    }

    /// EMA of every parameter (including buffers) toward `online`'s
    /// matching networks.
    pub fn ema_toward(&mut self, online: &Stack, m: f32) {
        ema_update(self.encoder.params_mut(), online.encoder.params(), m);
        for (t, o) in self.heads.iter_mut().zip(&online.heads) {
            ema_update(t.params_mut(), o.params(), m);
        }
    }
}

/// One SGD optimizer per network of a [`Stack`].
pub struct StackOptim {
    encoder: Sgd,
    heads: Vec<Sgd>,
}

impl StackOptim {
    pub fn new(stack: &Stack, lr: f32, momentum: f32, weight_decay: f32) -> Self {
        let mk = || Sgd::with_momentum(lr, momentum).weight_decay(weight_decay);
        Self {
            encoder: mk(),
            heads: stack.heads.iter().map(|_| mk()).collect(),
        }
    }

    pub fn step(&mut self, stack: &mut Stack, grads: &StackGrads, updates: NormUpdates) {
        self.encoder.step(stack.encoder.params_mut(), &grads.encoder);
        for ((opt, head), g) in self.heads.iter_mut().zip(&mut stack.heads).zip(&grads.heads) {
            opt.step(head.params_mut(), g);
        }
        stack.encoder.apply_norm_updates(updates);
    }
}

fn backward_step(loss: &Tensor, net: &mut Stack, binding: StackBinding, opt: &mut StackOptim) -> f32 {
    let value = loss.item();
    let mut g = loss.backward();
    let grads = Stack::grads(&binding, &mut g);
    opt.step(net, &grads, binding.updates);
    value
}

/// One SimCLR update on a batch whose rows `2k`, `2k + 1` are paired views.
pub fn simclr_step(net: &mut Stack, views: &Tensor, tau: f32, opt: &mut StackOptim) -> Result<f32> {
    let (z, binding) = net.forward(views, true, true);
    let loss = ntxent_loss(&z, tau)?;
    Ok(backward_step(&loss, net, binding, opt))
}

/// One MoCo update: contrast queries against the current keys and queue,
/// step the query network, move the key network toward it by EMA with
/// coefficient `m`, then enqueue the keys.
pub fn moco_step(
    query: &mut Stack,
    key: &mut Stack,
    queue: &mut FeatureQueue,
    xq: &Tensor,
    xk: &Tensor,
    m: f32,
    tau: f32,
    opt: &mut StackOptim,
) -> Result<f32> {
    let b = xq.rows();
    ensure!(
        b > 0 && queue.len() % b == 0,
        Config,
        "queue size {} is not a multiple of batch size {b}",
        queue.len()
    );
    let (k, _) = key.forward(xk, true, false);
    let (q, binding) = query.forward(xq, true, true);
    let loss = moco_loss(&q, &k, queue, tau)?;
    let value = backward_step(&loss, query, binding, opt);
    key.ema_toward(query, m);
    queue.enqueue(&k)?;
    Ok(value)
}

/// One BYOL update with the symmetric loss; the online stack is
/// encoder + projector + predictor, the target stack encoder + projector.
pub fn byol_step(online: &mut Stack, target: &mut Stack, v1: &Tensor, v2: &Tensor, decay: f32, opt: &mut StackOptim) -> Result<f32> {
    ensure!(online.heads.len() == target.heads.len() + 1, Config, "online stack needs one more head (the predictor) than the target");
    let b = v1.rows();
    let both = Tensor::cat_rows(&[v1.clone(), v2.clone()]);
    let (p, binding) = online.forward(&both, true, true);
    let (z, _) = target.forward(&both, true, false);
    let loss = byol_branch_loss(&p.slice_rows(0, b), &z.slice_rows(b, b))?
        .add(&byol_branch_loss(&p.slice_rows(b, b), &z.slice_rows(0, b))?);
    let value = backward_step(&loss, online, binding, opt);
    // the target mirrors the online encoder and projector only
    ema_update(target.encoder.params_mut(), online.encoder.params(), decay);
    for (t, o) in target.heads.iter_mut().zip(&online.heads) {
        ema_update(t.params_mut(), o.params(), decay);
    }
    Ok(value)
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub encoder: Encoder,
    pub epoch_losses: Vec<f32>,
}

fn views_for(
    dataset: &Dataset,
    idx: &[usize],
    policy: &AugmentationPolicy,
    seed: u64,
    epoch: usize,
) -> (Vec<Image>, Vec<Image>) {
    idx.iter()
        .map(|&i| {
            let mut rng = rng_from(item_seed(seed, "augment", &[i as u64, epoch as u64]));
            augment_pair(&dataset.images()[i], policy, &mut rng)
        })
        .unzip()
}

/// Pretrain an encoder with the configured algorithm; projection heads and
/// auxiliary networks are discarded.
pub fn pretrain(dataset: &Dataset, spec: &EncoderSpec, cfg: &SslConfig, seed: u64) -> Result<PretrainOutcome> {
    cfg.validate()?;
    ensure!(!dataset.is_empty(), Input, "pretraining dataset is empty");
    ensure!(dataset.len() >= 2, Input, "pretraining needs at least 2 samples");
    let encoder = Encoder::build(spec, derive_seed(seed, &["ssl", "encoder"]))?;
    let d = encoder.output_dim();
    let proj = projection_head(d, derive_seed(seed, &["ssl", "projector"]))?;
    let batch = cfg.batch_size.min(dataset.len());

    let mut online = match cfg.algorithm {
        Algorithm::Byol => Stack::new(encoder, vec![proj, predictor_head(d, derive_seed(seed, &["ssl", "predictor"]))?]),
        _ => Stack::new(encoder, vec![proj]),
    };
    let mut target = match cfg.algorithm {
        Algorithm::Simclr => None,
        _ => Some(Stack::new(online.encoder.clone(), vec![online.heads[0].clone()])),
    };
    let mut queue = None;
    if cfg.algorithm == Algorithm::MocoV2 {
        ensure!(
            cfg.queue_size % batch == 0,
            Config,
            "queue size {} is not a multiple of batch size {batch}",
            cfg.queue_size
        );
        // initial keys: encoded samples, cycling through the dataset
        let key = target.as_ref().expect("moco key network");
        let idx: Vec<usize> = (0..cfg.queue_size).map(|i| i % dataset.len()).collect();
        let imgs: Vec<Image> = idx.iter().map(|&i| dataset.images()[i].clone()).collect();
        let mut rows = Vec::new();
        for chunk in imgs.chunks(256) {
            let (k, _) = key.forward(&images_to_tensor(chunk)?, false, false);
            rows.extend_from_slice(k.data());
        }
        let keys = crate::nets::FeatureBatch::new(cfg.queue_size, key.heads[0].output_dim(), rows)?;
        queue = Some(FeatureQueue::from_keys(&keys)?);
    }
    let mut opt = StackOptim::new(&online, cfg.lr, cfg.sgd_momentum, cfg.weight_decay);
    let mut order_rng = rng_from(derive_seed(seed, &["ssl", "order"]));
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0f64;
        let batches = minibatches(dataset.len(), batch, &mut order_rng, false);
        for (step, idx) in batches.iter().enumerate() {
            let (a, b) = views_for(dataset, idx, &cfg.augmentation, seed, epoch);
            let loss = match cfg.algorithm {
                Algorithm::Simclr => {
                    let inter: Vec<Image> = a.into_iter().zip(b).flat_map(|(x, y)| [x, y]).collect();
                    simclr_step(&mut online, &images_to_tensor(&inter)?, cfg.temperature, &mut opt)?
                }
                Algorithm::MocoV2 => moco_step(
                    &mut online,
                    target.as_mut().expect("key network"),
                    queue.as_mut().expect("queue"),
                    &images_to_tensor(&a)?,
                    &images_to_tensor(&b)?,
                    cfg.momentum,
                    cfg.temperature,
                    &mut opt,
                )?,
                Algorithm::Byol => byol_step(
                    &mut online,
                    target.as_mut().expect("target network"),
                    &images_to_tensor(&a)?,
                    &images_to_tensor(&b)?,
                    cfg.byol_decay,
                    &mut opt,
                )?,
            };
            if !loss.is_finite() {
                return Err(Error::Training {
                    step: epoch * batches.len() + step,
                    reason: "non-finite pretraining loss".into(),
                });
            }
            total += loss as f64;
        }
        let mean = (total / batches.len().max(1) as f64) as f32;
        log::debug!("ssl epoch {epoch}: loss {mean:.4}");
        epoch_losses.push(mean);
    }
    Ok(PretrainOutcome {
        encoder: online.encoder,
        epoch_losses,
    })
}

/// SimCLR pretraining; returns the base encoder only.
pub fn pretrain_simclr(dataset: &Dataset, spec: &EncoderSpec, cfg: &SslConfig, seed: u64) -> Result<Encoder> {
    let cfg = SslConfig {
        algorithm: Algorithm::Simclr,
        ..cfg.clone()
    };
    pretrain(dataset, spec, &cfg, seed).map(|o| o.encoder)
}

#[cfg(test)]
mod tests;
