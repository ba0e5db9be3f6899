use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{ensure, Error, Result};
use crate::steal::{steal, StealConfig, VictimHandle};
use crate::wm::{watermark_rate_of, KeyTuple};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub attack: String,
    pub seed: u64,
    pub wr: f32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialTable {
    pub rows: Vec<TrialRow>,
}

impl TrialTable {
    /// `(min, mean)` WR per attack.
    pub fn summary(&self) -> BTreeMap<String, (f32, f32)> {
        let mut acc: BTreeMap<String, Vec<f32>> = BTreeMap::new();
        for r in &self.rows {
            acc.entry(r.attack.clone()).or_default().push(r.wr);
        }
        acc.into_iter()
            .map(|(k, v)| {
                let min = v.iter().copied().fold(f32::INFINITY, f32::min);
                let mean = v.iter().sum::<f32>() / v.len() as f32;
                (k, (min, mean))
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("attack,seed,wr\n");
        for r in &self.rows {
            writeln!(out, "{},{},{:.4}", r.attack, r.seed, r.wr).expect("string write");
        }
        out
    }
}

/// Repeat every attack with seeds `0..n_seeds` and measure WR of each
/// surrogate under `key`.
pub fn model_level_trial<'d>(
    victim: &VictimHandle,
    key: &KeyTuple,
    attacks: &[StealConfig],
    datasets: &dyn Fn(&str) -> Option<&'d Dataset>,
    n_seeds: usize,
) -> Result<TrialTable> {
    ensure!(n_seeds >= 1, Config, "at least one seed is required");
    let mut table = TrialTable::default();
    for attack in attacks {
        let queries = datasets(&attack.query_dataset)
            .ok_or_else(|| Error::Config(format!("unknown query dataset `{}`", attack.query_dataset)))?;
        for seed in 0..n_seeds as u64 {
            let cfg = StealConfig {
                seed,
                ..attack.clone()
            };
            let out = steal(victim, queries, &cfg)?;
            let wr = watermark_rate_of(&out.surrogate, key, key.th_w)?;
            log::info!("trial {} seed {seed}: WR {wr:.3}", attack.name);
            table.rows.push(TrialRow {
                attack: attack.name.clone(),
                seed,
                wr,
            });
        }
    }
    Ok(table)
}
