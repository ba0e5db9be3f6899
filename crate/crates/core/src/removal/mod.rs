//! Watermark removal attacks: magnitude pruning and fine-tuning against
//! the victim.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{ensure, Error, Result};
use crate::eval::{probe_da, ProbeConfig};
use crate::nets::Encoder;
use crate::steal::{steal_from, SimilarityKind, StealConfig, VictimHandle};
use crate::wm::{verify, KeyTuple};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Fraction of each convolution layer's weights set to zero.
    pub r: f32,
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!((0.0..1.0).contains(&self.r), Config, "prune ratio must be in [0, 1), got {}", self.r);
        Ok(())
    }
}

/// Zero the `floor(r * len)` entries of smallest magnitude. Ties keep
/// parameter order, and existing zeros rank first.
pub fn prune_slice(weights: &mut [f32], r: f32) {
    let k = (r as f64 * weights.len() as f64).floor() as usize;
    if k == 0 {
        return;
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // sort_by is stable, so equal magnitudes stay in index order
    order.sort_by(|&a, &b| weights[a].abs().total_cmp(&weights[b].abs()));
    for &i in &order[..k] {
        weights[i] = 0.0;
    }
}

/// Magnitude-prune every convolution layer independently.
pub fn prune(encoder: &Encoder, r: f32) -> Result<Encoder> {
    PruneConfig { r }.validate()?;
    let mut out = encoder.clone();
    for i in encoder.conv_weight_indices() {
        prune_slice(&mut out.params_mut().get_mut(i).data, r);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Continue training `surrogate` with the cosine stealing objective against
/// the victim. Pruned weights are not masked and may regrow.
pub fn finetune_under_victim(surrogate: &Encoder, victim: &VictimHandle, dataset: &Dataset, cfg: &FinetuneConfig) -> Result<Encoder> {
    ensure!(!dataset.is_empty(), Input, "finetuning dataset is empty");
    let mut steal_cfg = StealConfig::new("finetune", surrogate.spec().clone(), dataset.name.clone(), SimilarityKind::Cosine);
    steal_cfg.epochs = cfg.epochs;
    steal_cfg.lr = cfg.lr;
    steal_cfg.momentum = cfg.momentum;
    steal_cfg.batch_size = cfg.batch_size;
    steal_cfg.seed = cfg.seed;
    Ok(steal_from(victim, dataset, &steal_cfg, surrogate.clone())?.surrogate)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalRow {
    pub encoder_id: String,
    pub r: f32,
    pub finetuned: bool,
    pub wr: f32,
    pub da: f32,
}

/// Evaluation inputs shared by every cell of a removal grid.
pub struct RemovalEval<'a> {
    pub key: &'a KeyTuple,
    pub probe_train: &'a Dataset,
    pub probe_test: &'a Dataset,
    pub probe: &'a ProbeConfig,
}

/// Prune each encoder at each ratio, then fine-tune the pruned copy, and
/// record WR and probe DA for both.
pub fn removal_grid(
    encoders: &[(&str, &Encoder)],
    ratios: &[f32],
    victim: &VictimHandle,
    finetune_data: &Dataset,
    finetune: &FinetuneConfig,
    eval: &RemovalEval<'_>,
) -> Result<Vec<RemovalRow>> {
    let mut rows = Vec::new();
    for &(id, enc) in encoders {
        for &r in ratios {
            let pruned = prune(enc, r)?;
            let tuned = finetune_under_victim(&pruned, victim, finetune_data, finetune)?;
            for (finetuned, e) in [(false, &pruned), (true, &tuned)] {
                let report = verify(e, eval.key, eval.key.th_w, eval.key.th_v)?;
                let da = probe_da(e, eval.probe_train, eval.probe_test, eval.probe, finetune.seed)?;
                log::info!("removal {id} r={r} finetuned={finetuned}: WR {:.3} DA {da:.3}", report.wr);
                rows.push(RemovalRow {
                    encoder_id: id.to_string(),
                    r,
                    finetuned,
                    wr: report.wr,
                    da,
                });
            }
        }
    }
    Ok(rows)
}

pub fn removal_csv(rows: &[RemovalRow]) -> String {
    let mut out = String::from("encoder_id,r,finetuned,wr,da\n");
    for row in rows {
        writeln!(out, "{},{},{},{:.4},{:.4}", row.encoder_id, row.r, row.finetuned as u8, row.wr, row.da).expect("string write");
    }
    out
}

pub fn write_removal_csv(path: &Path, rows: &[RemovalRow]) -> Result<()> {
    fs::write(path, removal_csv(rows)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;
