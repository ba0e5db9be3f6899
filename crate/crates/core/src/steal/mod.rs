//! Black-box model stealing of encoders.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{minibatches, Dataset, Image};
use crate::digest::canonical_hash;
use crate::error::{ensure, Error, Result};
use crate::eval::{probe_da, ProbeConfig};
use crate::nets::{Encoder, EncoderSpec, FeatureBatch};
use crate::optim::{Optimizer, Sgd};
use crate::rng::{derive_seed, rng_from};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    Cosine,
    Mse,
    Mae,
}

impl SimilarityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityKind::Cosine => "cosine",
            SimilarityKind::Mse => "mse",
            SimilarityKind::Mae => "mae",
        }
    }
}

/// Per-sample similarity (cosine) or distance (mse, mae), reduced over the
/// feature axis.
pub fn similarity(a: &FeatureBatch, b: &FeatureBatch, kind: SimilarityKind) -> Result<Vec<f32>> {
    ensure!(a.shape() == b.shape(), Input, "feature shapes differ: {:?} vs {:?}", a.shape(), b.shape());
    let (ta, tb) = (a.to_tensor(), b.to_tensor());
    let out = match kind {
        SimilarityKind::Cosine => ta.cosine_rows(&tb),
        SimilarityKind::Mse => ta.sub(&tb).sqr().mean_rows_per_sample(),
        SimilarityKind::Mae => ta.sub(&tb).abs().mean_rows_per_sample(),
    };
    Ok(out.to_vec())
}

trait RowMean {
    fn mean_rows_per_sample(&self) -> Tensor;
}

impl RowMean for Tensor {
    /// `[N, D] -> [N]` mean over the feature axis.
    fn mean_rows_per_sample(&self) -> Tensor {
        let (n, d) = self.dims2();
        let ones = Tensor::new(vec![1.0 / d as f32; d], &[d, 1]);
        self.matmul(&ones).reshape(&[n])
    }
}

/// Training objective for one batch; every kind is minimized.
fn steal_loss(victim: &Tensor, out: &Tensor, kind: SimilarityKind) -> Tensor {
    match kind {
        SimilarityKind::Cosine => out.cosine_rows(victim).mean_all().neg(),
        SimilarityKind::Mse => out.sub(victim).sqr().mean_all(),
        SimilarityKind::Mae => out.sub(victim).abs().mean_all(),
    }
}

type QueryFn<'a> = dyn Fn(&[Image]) -> Result<FeatureBatch> + Sync + 'a;

/// Query-only access to a victim encoder.
pub struct VictimHandle<'a> {
    query: Box<QueryFn<'a>>,
    dim: usize,
}

impl<'a> VictimHandle<'a> {
    pub fn new(dim: usize, query: impl Fn(&[Image]) -> Result<FeatureBatch> + Sync + 'a) -> Self {
        Self {
            query: Box::new(query),
            dim,
        }
    }

    /// Wrap an encoder queried in inference mode.
    pub fn from_encoder(encoder: &'a Encoder) -> Self {
        Self::new(encoder.output_dim(), move |images| encoder.encode(images))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn query(&self, images: &[Image]) -> Result<FeatureBatch> {
        let f = (self.query)(images)?;
        ensure!(
            f.rows() == images.len() && f.dim() == self.dim,
            Numeric,
            "victim answered {:?} for {} queries of width {}",
            f.shape(),
            images.len(),
            self.dim
        );
        Ok(f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StealConfig {
    pub name: String,
    pub surrogate_spec: EncoderSpec,
    pub query_dataset: String,
    pub similarity: SimilarityKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    #[serde(default = "default_momentum")]
    pub momentum: f32,
    /// Insert an output adapter when the surrogate width differs from the
    /// victim's.
    #[serde(default = "default_true")]
    pub auto_adapter: bool,
    pub seed: u64,
}

fn default_momentum() -> f32 {
    0.9
}

fn default_true() -> bool {
    true
}

impl StealConfig {
    pub fn new(name: impl Into<String>, surrogate_spec: EncoderSpec, query_dataset: impl Into<String>, similarity: SimilarityKind) -> Self {
        Self {
            name: name.into(),
            surrogate_spec,
            query_dataset: query_dataset.into(),
            similarity,
            epochs: 20,
            batch_size: 64,
            lr: 0.01,
            momentum: default_momentum(),
            auto_adapter: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size > 0, Config, "batch_size must be positive");
        ensure!(self.lr > 0.0, Config, "lr must be positive");
        ensure!((0.0..1.0).contains(&self.momentum), Config, "momentum must be in [0, 1)");
        self.surrogate_spec.validate()
    }

    pub fn hash(&self) -> Result<String> {
        canonical_hash(self)
    }

    /// Surrogate spec with the adapter resolved against the victim width.
    pub fn resolved_spec(&self, victim_dim: usize) -> Result<EncoderSpec> {
        let mut spec = self.surrogate_spec.clone();
        if spec.output_dim() != victim_dim {
            ensure!(
                self.auto_adapter,
                Config,
                "surrogate width {} differs from victim width {victim_dim} and no adapter is allowed",
                spec.output_dim()
            );
            spec.adapter_dim = Some(victim_dim);
        }
        Ok(spec)
    }
}

#[derive(Clone, Debug)]
pub struct StealOutcome {
    pub surrogate: Encoder,
    pub epoch_losses: Vec<f32>,
    /// Mean cosine similarity to the victim over each epoch's batches.
    pub epoch_similarity: Vec<f32>,
}

/// Train a surrogate from scratch to reproduce the victim's features.
pub fn steal(victim: &VictimHandle, queries: &Dataset, cfg: &StealConfig) -> Result<StealOutcome> {
    cfg.validate()?;
    let spec = cfg.resolved_spec(victim.dim())?;
    let init = Encoder::build(&spec, derive_seed(cfg.seed, &["steal", "init"]))?;
    steal_from(victim, queries, cfg, init)
}

/// Train a given surrogate against the victim with `cfg`'s objective.
pub fn steal_from(victim: &VictimHandle, queries: &Dataset, cfg: &StealConfig, mut surrogate: Encoder) -> Result<StealOutcome> {
    cfg.validate()?;
    ensure!(!queries.is_empty(), Input, "query dataset is empty");
    ensure!(
        surrogate.output_dim() == victim.dim(),
        Config,
        "surrogate width {} differs from victim width {}",
        surrogate.output_dim(),
        victim.dim()
    );
    let targets = victim.query(queries.images())?;
    let mut opt = Sgd::with_momentum(cfg.lr, cfg.momentum);
    let mut rng = rng_from(derive_seed(cfg.seed, &["steal", "order"]));
    let batch = cfg.batch_size.min(queries.len());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut epoch_similarity = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (mut loss_sum, mut cos_sum, mut count) = (0.0f64, 0.0f64, 0usize);
        let batches = minibatches(queries.len(), batch, &mut rng, false);
        for idx in &batches {
            let x = queries.batch_tensor(idx)?;
            let y = targets.select(idx).to_tensor();
            let (out, bound, upd) = surrogate.forward_train(&x);
            let loss = steal_loss(&y, &out, cfg.similarity);
            let v = loss.item();
            if !v.is_finite() {
                return Err(Error::Training {
                    step: epoch,
                    reason: "non-finite stealing loss".into(),
                });
            }
            let cos = out.detach().cosine_rows(&y);
            cos_sum += cos.data().iter().map(|&c| c as f64).sum::<f64>();
            loss_sum += v as f64 * idx.len() as f64;
            count += idx.len();
            let mut g = loss.backward();
            let grads = bound.grads(&mut g);
            opt.step(surrogate.params_mut(), &grads);
            surrogate.apply_norm_updates(upd);
        }
        epoch_losses.push((loss_sum / count.max(1) as f64) as f32);
        epoch_similarity.push((cos_sum / count.max(1) as f64) as f32);
        log::debug!("steal {} epoch {epoch}: loss {:.4} cos {:.4}", cfg.name, epoch_losses[epoch], epoch_similarity[epoch]);
    }
    Ok(StealOutcome {
        surrogate,
        epoch_losses,
        epoch_similarity,
    })
}

/// Labeled train/test split used to score a surrogate.
pub struct ProbeTask<'a> {
    pub name: String,
    pub train: &'a Dataset,
    pub test: &'a Dataset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    pub final_loss: f32,
    pub final_similarity: f32,
    pub da: BTreeMap<String, f32>,
}

pub struct GridRow {
    pub config: StealConfig,
    pub result: Result<(Encoder, AttackMetrics)>,
}

/// Run every attack configuration; a failing cell is recorded in its row
/// and the remaining cells still run.
pub fn run_attack_grid<'d>(
    victim: &VictimHandle,
    grid: &[StealConfig],
    datasets: &dyn Fn(&str) -> Option<&'d Dataset>,
    tasks: &[ProbeTask],
    probe: &ProbeConfig,
) -> Vec<GridRow> {
    grid.iter()
        .map(|cfg| {
            let result = (|| {
                let queries = datasets(&cfg.query_dataset)
                    .ok_or_else(|| Error::Config(format!("unknown query dataset `{}`", cfg.query_dataset)))?;
                let out = steal(victim, queries, cfg)?;
                let mut da = BTreeMap::new();
                for t in tasks {
                    da.insert(t.name.clone(), probe_da(&out.surrogate, t.train, t.test, probe, cfg.seed)?);
                }
                let metrics = AttackMetrics {
                    final_loss: out.epoch_losses.last().copied().unwrap_or(f32::NAN),
                    final_similarity: out.epoch_similarity.last().copied().unwrap_or(f32::NAN),
                    da,
                };
                Ok((out.surrogate, metrics))
            })();
            if let Err(e) = &result {
                log::warn!("attack `{}` failed: {e}", cfg.name);
            }
            GridRow {
                config: cfg.clone(),
                result,
            }
        })
        .collect()
}

/// CSV with one line per grid row: config hash, attack, surrogate family,
/// query dataset, similarity kind, final loss, final similarity, DA per task
/// (columns ordered by task name), and an error message for failed cells.
pub fn grid_csv(rows: &[GridRow]) -> Result<String> {
    let mut tasks: Vec<String> = rows
        .iter()
        .filter_map(|r| r.result.as_ref().ok())
        .flat_map(|(_, m)| m.da.keys().cloned())
        .collect();
    tasks.sort();
    tasks.dedup();
    let mut out = String::from("config_hash,attack,surrogate,queries,similarity,final_loss,final_similarity");
    for t in &tasks {
        write!(out, ",da_{t}").expect("string write");
    }
    out.push_str(",error\n");
    for r in rows {
        let c = &r.config;
        write!(
            out,
            "{},{},{},{},{}",
            c.hash()?,
            c.name,
            c.surrogate_spec.family.as_str(),
            c.query_dataset,
            c.similarity.as_str()
        )
        .expect("string write");
        match &r.result {
            Ok((_, m)) => {
                write!(out, ",{:.6},{:.6}", m.final_loss, m.final_similarity).expect("string write");
                for t in &tasks {
                    match m.da.get(t) {
                        Some(v) => write!(out, ",{v:.6}").expect("string write"),
                        None => out.push(','),
                    }
                }
                out.push_str(",\n");
            }
            Err(e) => {
                out.push_str(",,");
                out.push_str(&",".repeat(tasks.len()));
                writeln!(out, ",\"{}\"", e.to_string().replace('"', "'")).expect("string write");
            }
        }
    }
    Ok(out)
}

pub fn write_grid_csv(path: &Path, rows: &[GridRow]) -> Result<()> {
    fs::write(path, grid_csv(rows)?).map_err(|e| Error::io(path, e))
}
