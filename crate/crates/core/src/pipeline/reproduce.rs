use std::collections::BTreeMap;
use std::path::Path;

use super::config::{build_splits, seed_everything, ExperimentConfig, Splits};
use super::results::{AblationRow, AttackRow, CrossKeyRow, EncoderWr, FidelityRow, ReproduceResults, RESULTS_FILE};
use super::run::{verify_run, RunDir};
use crate::error::{Error, Result};
use crate::eval::{model_level_trial, probe_da, similarity_histogram};
use crate::nets::{Checkpoint, Encoder};
use crate::removal::{removal_grid, RemovalEval};
use crate::rng::SeedRegistry;
use crate::ssl::pretrain;
use crate::steal::{similarity, steal, SimilarityKind, StealConfig, VictimHandle};
use crate::wm::{embed, extract, sample_sk, verify, EmbedConfig, EmbedOutcome, KeyTuple};

fn provenance(cfg_hash: &str, role: &str) -> BTreeMap<String, String> {
    BTreeMap::from([("config_hash".to_string(), cfg_hash.to_string()), ("role".to_string(), role.to_string())])
}

fn mean_cos(a: &Encoder, b: &Encoder, images: &[crate::data::Image]) -> Result<f32> {
    let s = similarity(&a.encode(images)?, &b.encode(images)?, SimilarityKind::Cosine)?;
    Ok(s.iter().sum::<f32>() / s.len().max(1) as f32)
}

fn wr(e: &Encoder, key: &KeyTuple) -> Result<f32> {
    Ok(verify(e, key, key.th_w, key.th_v)?.wr)
}

fn run_embed(cfg: &ExperimentConfig, clean: &Encoder, splits: &Splits, seed: u64, use_shadow: bool) -> Result<EmbedOutcome> {
    let ecfg = EmbedConfig {
        seed,
        use_shadow,
        ..cfg.embed.clone()
    };
    embed(clean, splits.expect("train")?, splits.expect("shadow")?, splits.expect("private")?, &ecfg)
}

/// Attack config with its seed tied to the run seed.
fn seeded(a: &StealConfig, seeds: &SeedRegistry) -> StealConfig {
    StealConfig {
        seed: seeds.seed_for(&format!("steal/{}/{}", a.name, a.seed)),
        ..a.clone()
    }
}

/// The full desk-scale suite: pretrain, embed, cross-key check, stealing,
/// removal, histograms, repeated trials and the no-shadow ablation. Every
/// artifact lands in `run`; the returned record is also written there.
pub fn reproduce(cfg: &ExperimentConfig, run: &RunDir) -> Result<ReproduceResults> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    run.write("config.toml", cfg.to_toml()?.as_bytes())?;
    let seeds = seed_everything(cfg.seed);
    let splits = build_splits(&cfg.data, &seeds)?;
    let probe_train = splits.expect("probe_train")?;
    let probe_test = splits.expect("probe_test")?;
    let probe_seed = seeds.seed_for("probe");
    let da = |e: &Encoder| probe_da(e, probe_train, probe_test, &cfg.probe, probe_seed);

    log::info!("pretraining victim");
    let clean = pretrain(splits.expect("train")?, &cfg.victim.spec, &cfg.victim.ssl, seeds.seed_for("pretrain"))?.encoder;
    Checkpoint::save_encoder(&run.join("checkpoints/clean"), &clean, provenance(&hash, "clean"))?;

    log::info!("embedding");
    let main = run_embed(cfg, &clean, &splits, seeds.seed_for("embed/a"), true)?;
    let fw = &main.watermarked;
    let key = &main.key;
    Checkpoint::save_encoder(&run.join("checkpoints/watermarked"), fw, provenance(&hash, "watermarked"))?;
    let shadow = main.shadow.as_ref().ok_or_else(|| Error::Training {
        step: 0,
        reason: "embedding returned no shadow encoder".into(),
    })?;
    Checkpoint::save_encoder(&run.join("checkpoints/shadow"), shadow, provenance(&hash, "shadow"))?;
    key.save(&run.join("key"), provenance(&hash, "key"))?;

    let table2 = [("clean", &clean), ("watermarked", fw), ("shadow", shadow)]
        .into_iter()
        .map(|(name, e)| {
            let r = verify(e, key, key.th_w, key.th_v)?;
            Ok(EncoderWr {
                encoder: name.into(),
                wr: r.wr,
                verdict: r.verdict,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let table3 = vec![
        FidelityRow {
            encoder: "clean".into(),
            da: da(&clean)?,
            cos_to_clean: 1.0,
        },
        FidelityRow {
            encoder: "watermarked".into(),
            da: da(fw)?,
            cos_to_clean: mean_cos(&clean, fw, probe_test.images())?,
        },
    ];

    log::info!("second embedding for the cross-key table");
    let other = run_embed(cfg, &clean, &splits, seeds.seed_for("embed/b"), true)?;
    let mut table4 = Vec::new();
    for (ename, e) in [("a", fw), ("b", &other.watermarked)] {
        for (kname, k) in [("a", key), ("b", &other.key)] {
            table4.push(CrossKeyRow {
                encoder: ename.into(),
                key: kname.into(),
                wr: wr(e, k)?,
            });
        }
    }

    log::info!("stealing");
    let victim = VictimHandle::from_encoder(fw);
    let mut table6 = Vec::new();
    let mut surrogates: BTreeMap<String, Encoder> = BTreeMap::new();
    for a in &cfg.steal {
        let sc = seeded(a, &seeds);
        let out = steal(&victim, splits.expect(&a.query_dataset)?, &sc)?;
        let sims = extract(&out.surrogate, key)?;
        let report = verify(&out.surrogate, key, key.th_w, key.th_v)?;
        table6.push(AttackRow {
            attack: a.name.clone(),
            surrogate: format!("{:?}", a.surrogate_spec.family).to_lowercase(),
            queries: a.query_dataset.clone(),
            similarity: format!("{:?}", a.similarity).to_lowercase(),
            final_similarity: out.epoch_similarity.last().copied().unwrap_or(0.0),
            da: da(&out.surrogate)?,
            wr: report.wr,
            mean_key_cos: sims.iter().sum::<f32>() / sims.len().max(1) as f32,
            verdict: report.verdict,
        });
        Checkpoint::save_encoder(&run.join(&format!("checkpoints/{}", a.name)), &out.surrogate, provenance(&hash, &a.name))?;
        surrogates.insert(a.name.clone(), out.surrogate);
    }

    log::info!("removal");
    let mut table7 = Vec::new();
    if !cfg.removal.ratios.is_empty() {
        let sur = &surrogates[&cfg.removal.surrogate];
        let finetune = crate::removal::FinetuneConfig {
            seed: seeds.seed_for("finetune"),
            ..cfg.removal.finetune.clone()
        };
        let eval = RemovalEval {
            key,
            probe_train,
            probe_test,
            probe: &cfg.probe,
        };
        table7 = removal_grid(
            &[("watermarked", fw), (cfg.removal.surrogate.as_str(), sur)],
            &cfg.removal.ratios,
            &victim,
            splits.expect(&cfg.removal.query_dataset)?,
            &finetune,
            &eval,
        )?;
    }

    let fig7_key = similarity_histogram(fw, &key.decoder, &key.verification, std::slice::from_ref(&key.sk))?;
    let base = seeds.seed_for("fig7/random");
    let refs = (0..cfg.histogram_references as u64)
        .map(|i| sample_sk(key.key_dim(), base.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    let fig7_random = similarity_histogram(fw, &key.decoder, &key.verification, &refs)?;

    log::info!("repeated trials");
    let trial_attacks: Vec<StealConfig> = cfg.trials.attacks.iter().map(|n| cfg.attack(n).expect("validated").clone()).collect();
    let lookup = |n: &str| splits.get(n);
    let fig8 = model_level_trial(&victim, key, &trial_attacks, &lookup, cfg.trials.n_seeds)?;

    log::info!("no-shadow ablation");
    let ablated = run_embed(cfg, &clean, &splits, seeds.seed_for("embed/a"), false)?;
    let ablation_watermarked_wr = wr(&ablated.watermarked, &ablated.key)?;
    let ablated_victim = VictimHandle::from_encoder(&ablated.watermarked);
    let mut ablation = Vec::new();
    for a in &trial_attacks {
        let sc = seeded(a, &seeds);
        let out = steal(&ablated_victim, splits.expect(&a.query_dataset)?, &sc)?;
        ablation.push(AblationRow {
            attack: a.name.clone(),
            wr_with_shadow: table6.iter().find(|r| r.attack == a.name).map_or(0.0, |r| r.wr),
            wr_without_shadow: wr(&out.surrogate, &ablated.key)?,
        });
    }

    let results = ReproduceResults {
        config_hash: hash,
        table2,
        table3,
        table4,
        table6,
        table7,
        fig7_key,
        fig7_random,
        fig8,
        ablation_watermarked_wr,
        ablation,
    };
    run.write(RESULTS_FILE, serde_json::to_string_pretty(&results)?.as_bytes())?;
    results.write_csvs(&run.path)?;
    run.finish()?;
    Ok(results)
}

/// Regenerate the CSV tables of a finished run into `out`, after checking
/// the run manifest.
pub fn report(run_dir: &Path, out: &Path) -> Result<ReproduceResults> {
    verify_run(run_dir)?;
    let results = ReproduceResults::load(&run_dir.join(RESULTS_FILE))?;
    results.write_csvs(out)?;
    Ok(results)
}
