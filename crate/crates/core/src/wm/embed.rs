use std::collections::HashSet;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{apply_trigger, make_mask, sample_sk, KeyTuple, Mask, Trigger, DEFAULT_COVERAGE, DEFAULT_TH_V, DEFAULT_TH_W};
use crate::data::{minibatches, Dataset, Image};
use crate::error::{ensure, Error, Result};
use crate::nets::{Decoder, DecoderSpec, Encoder, EncoderSpec, Family, Forward, DEFAULT_KEY_DIM};
use crate::optim::{Optimizer, Sgd};
use crate::rng::{derive_seed, rng_from, StreamRng};
use crate::tensor::Tensor;

use super::loss::{corr_from_decoded, match_from_features, uncorr_from_decoded};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub steps: usize,
    pub batch_train: usize,
    pub batch_shadow: usize,
    pub batch_verify: usize,
    pub lr_w: f32,
    pub lr_s: f32,
    pub lr_t: f32,
    pub lr_g: f32,
    /// Heavy-ball momentum shared by the four SGD optimizers.
    pub momentum: f32,
    pub th_w: f32,
    pub th_v: f32,
    pub key_dim: usize,
    pub coverage: f32,
    pub shadow_spec: EncoderSpec,
    /// Train and use the shadow encoder. Disabling it drops every shadow
    /// term from the objectives.
    pub use_shadow: bool,
    /// Passes over D_shadow that train the shadow encoder on the starting
    /// encoder before the joint steps begin.
    pub shadow_warmup_epochs: usize,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_train: 64,
            batch_shadow: 64,
            batch_verify: 32,
            lr_w: 0.01,
            lr_s: 0.01,
            lr_t: 0.005,
            lr_g: 0.005,
            momentum: 0.9,
            th_w: DEFAULT_TH_W,
            th_v: DEFAULT_TH_V,
            key_dim: DEFAULT_KEY_DIM,
            coverage: DEFAULT_COVERAGE,
            shadow_spec: EncoderSpec::new(Family::ResnetSmall, 64),
            use_shadow: true,
            shadow_warmup_epochs: 0,
            seed: 0,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lr_w", self.lr_w), ("lr_s", self.lr_s), ("lr_t", self.lr_t), ("lr_g", self.lr_g)] {
            ensure!(v > 0.0, Config, "{name} must be positive, got {v}");
        }
        ensure!((0.0..1.0).contains(&self.momentum), Config, "momentum must be in [0, 1)");
        ensure!(self.th_w > 0.0 && self.th_w < 1.0, Config, "th_w must be in (0, 1)");
        ensure!(self.th_v > 0.0 && self.th_v < 1.0, Config, "th_v must be in (0, 1)");
        ensure!(
            self.batch_train > 0 && self.batch_shadow > 0 && self.batch_verify > 0,
            Config,
            "batch sizes must be positive"
        );
        self.shadow_spec.validate()
    }
}

/// Loss values of one embedding step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub step: usize,
    pub shadow: f32,
    pub watermark: f32,
    pub trigger: f32,
}

#[derive(Clone, Debug)]
pub struct EmbedOutcome {
    pub watermarked: Encoder,
    pub key: KeyTuple,
    pub shadow: Option<Encoder>,
    pub history: Vec<StepLosses>,
}

fn image_hash(im: &Image) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in im.data() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

fn draw(ds: &Dataset, b: usize, rng: &mut StreamRng) -> Result<Tensor> {
    let idx = sample(rng, ds.len(), b.min(ds.len())).into_vec();
    ds.batch_tensor(&idx)
}

fn checked(v: f32, step: usize, what: &str) -> Result<f32> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Training {
            step,
            reason: format!("{what} loss is not finite"),
        })
    }
}

fn shadow_step(sh: &mut Encoder, target: &Encoder, xs: &Tensor, opt: &mut Sgd, step: usize) -> Result<f32> {
    let want = target.apply(xs);
    let (out, bound, upd) = sh.forward_train(xs);
    let loss = match_from_features(&want, &out)?;
    let ls = checked(loss.item(), step, "shadow")?;
    let mut g = loss.backward();
    let grads = bound.grads(&mut g);
    opt.step(sh.params_mut(), &grads);
    sh.apply_norm_updates(upd);
    Ok(ls)
}

/// Jointly optimize the watermarked encoder, shadow encoder, trigger and
/// decoder starting from `clean`, which is only used as a fixed reference.
///
/// Each step updates, in order: the shadow encoder on the shadow match
/// loss; the watermarked encoder on fidelity + uncorrelated(train) +
/// correlated(verification); then the trigger and decoder on the
/// correlated/uncorrelated terms across the clean, watermarked and shadow
/// encoders. While one group is updated the others are held constant.
pub fn embed(clean: &Encoder, d_train: &Dataset, d_shadow: &Dataset, d_priv: &Dataset, cfg: &EmbedConfig) -> Result<EmbedOutcome> {
    cfg.validate()?;
    ensure!(!d_train.is_empty(), Input, "D_train is empty");
    ensure!(!d_priv.is_empty(), Input, "D_priv is empty");
    ensure!(!cfg.use_shadow || !d_shadow.is_empty(), Input, "D_shadow is empty");
    let train_hashes: HashSet<[u8; 32]> = d_train.images().iter().map(image_hash).collect();
    ensure!(
        !d_priv.images().iter().any(|im| train_hashes.contains(&image_hash(im))),
        Input,
        "D_priv and D_train share images"
    );
    let shape = clean.spec().input_shape;
    let d = clean.output_dim();
    let seed = cfg.seed;

    let mut fw = clean.clone().freeze_batchnorm();
    let mut shadow_spec = cfg.shadow_spec.clone();
    shadow_spec.input_shape = shape;
    if shadow_spec.output_dim() != d {
        shadow_spec.adapter_dim = Some(d);
    }
    let mut shadow = if cfg.use_shadow {
        Some(Encoder::build(&shadow_spec, derive_seed(seed, &["embed", "shadow"]))?)
    } else {
        None
    };
    let mut decoder = Decoder::build(&DecoderSpec::scaled(d, cfg.key_dim), derive_seed(seed, &["embed", "decoder"]))?;
    let sk = sample_sk(cfg.key_dim, seed)?;
    let mut trigger = Trigger::random(shape, seed);
    let mask: Mask = make_mask(shape, cfg.coverage)?;

    let sgd = |lr| Sgd::with_momentum(lr, cfg.momentum);
    let (mut opt_s, mut opt_w, mut opt_t, mut opt_g) = (sgd(cfg.lr_s), sgd(cfg.lr_w), sgd(cfg.lr_t), sgd(cfg.lr_g));
    let mut rng = rng_from(derive_seed(seed, &["embed", "batches"]));
    let mut history = Vec::with_capacity(cfg.steps);

    if let Some(sh) = shadow.as_mut() {
        for epoch in 0..cfg.shadow_warmup_epochs {
            let mut total = 0.0;
            let batches = minibatches(d_shadow.len(), cfg.batch_shadow, &mut rng, false);
            for idx in &batches {
                let xs = d_shadow.batch_tensor(idx)?;
                total += shadow_step(sh, &fw, &xs, &mut opt_s, 0)?;
            }
            log::debug!("shadow warm-up epoch {epoch}: L_s {:.4}", total / batches.len().max(1) as f32);
        }
    }

    for step in 0..cfg.steps {
        let xs = if cfg.use_shadow {
            Some(draw(d_shadow, cfg.batch_shadow, &mut rng)?)
        } else {
            None
        };
        let xt = draw(d_train, cfg.batch_train, &mut rng)?;
        let xp = draw(d_priv, cfg.batch_verify, &mut rng)?;
        let (bt, bv) = (xt.rows(), xp.rows());

        // shadow encoder
        let mut ls = 0.0;
        if let (Some(sh), Some(xs)) = (shadow.as_mut(), xs.as_ref()) {
            ls = shadow_step(sh, &fw, xs, &mut opt_s, step)?;
        }

        // watermarked encoder
        let clean_xt = clean.apply(&xt);
        let dv = xp.blend(&trigger.to_tensor(false), &mask.data);
        let (feats, bound, _) = fw.forward_train(&Tensor::cat_rows(&[xt.clone(), dv]));
        let ft = feats.slice_rows(0, bt);
        let fv = feats.slice_rows(bt, bv);
        let lw_t = match_from_features(&clean_xt, &ft)?
            .add(&uncorr_from_decoded(&decoder.mlp().apply(&ft), &sk))
            .add(&corr_from_decoded(&decoder.mlp().apply(&fv), &sk));
        let lw = checked(lw_t.item(), step, "watermark")?;
        let mut g = lw_t.backward();
        let grads = bound.grads(&mut g);
        opt_w.step(fw.params_mut(), &grads);
        let ft_prev = ft.detach();

        // trigger and decoder
        let t = trigger.to_tensor(true);
        let dv = xp.blend(&t, &mask.data);
        let mut parts = vec![fw.apply(&dv), clean_xt, clean.apply(&dv), ft_prev];
        if let Some(sh) = shadow.as_ref() {
            parts.push(sh.apply(&dv));
            parts.push(sh.apply(&xt));
        }
        let sizes: Vec<usize> = parts.iter().map(Tensor::rows).collect();
        let g_bound = decoder.mlp().params().bind(true);
        let mut f = Forward::new(decoder.mlp().params(), &g_bound, true);
        let decoded = decoder.mlp().forward(&Tensor::cat_rows(&parts), &mut f);
        let mut offset = 0;
        let mut chunk = |i: usize| {
            let c = decoded.slice_rows(offset, sizes[i]);
            offset += sizes[i];
            c
        };
        let (dw_v, dc_t, dc_v, dw_t) = (chunk(0), chunk(1), chunk(2), chunk(3));
        let mut lt_t = corr_from_decoded(&dw_v, &sk)
            .add(&uncorr_from_decoded(&dc_t, &sk))
            .add(&uncorr_from_decoded(&dc_v, &sk))
            .add(&uncorr_from_decoded(&dw_t, &sk));
        if shadow.is_some() {
            let (ds_v, ds_t) = (chunk(4), chunk(5));
            lt_t = lt_t
                .add(&corr_from_decoded(&ds_v, &sk))
                .add(&uncorr_from_decoded(&ds_t, &sk));
        }
        let lt = checked(lt_t.item(), step, "trigger")?;
        let mut g = lt_t.backward();
        let gt = g.take(&t).expect("trigger gradient");
        let gg = g_bound.grads(&mut g);
        opt_t.step_slice(&mut trigger.data, &gt);
        trigger.clamp01();
        opt_g.step(decoder.mlp_mut().params_mut(), &gg);

        if step % 20 == 0 || step + 1 == cfg.steps {
            log::debug!("embed step {step}: L_s {ls:.4} L_w {lw:.4} L_T {lt:.4}");
        }
        history.push(StepLosses {
            step,
            shadow: ls,
            watermark: lw,
            trigger: lt,
        });
    }

    let private = d_priv.images().to_vec();
    for im in &private {
        // shape validated against the trigger here
        apply_trigger(im, &trigger, &mask)?;
    }
    let key = KeyTuple::new(private, trigger, mask, decoder, sk, cfg.th_w, cfg.th_v)?;
    Ok(EmbedOutcome {
        watermarked: fw,
        key,
        shadow,
        history,
    })
}
