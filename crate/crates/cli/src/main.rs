use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sslguard_core::eval::probe_da;
use sslguard_core::nets::{Checkpoint, Encoder};
use sslguard_core::pipeline::{build_splits, report, reproduce, seed_everything, ExperimentConfig, RunDir, Splits};
use sslguard_core::removal::{finetune_under_victim, prune, FinetuneConfig};
use sslguard_core::ssl::pretrain;
use sslguard_core::steal::{steal, VictimHandle};
use sslguard_core::wm::{embed, verify, EmbedConfig, KeyTuple};

#[derive(Parser)]
#[command(name = "sslguard", version, about = "Watermark, steal and verify self-supervised image encoders")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); the built-in desk config is used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's output root.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Directory with CIFAR-10 binary batches (also read from SSLGUARD_DATA_DIR).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Write into this run directory instead of a new timestamped one.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Built-in config used when no --config is given.
    #[arg(long, value_enum, global = true, default_value = "desk")]
    scale: Scale,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Desk,
    Smoke,
}

#[derive(Subcommand)]
enum Command {
    /// Self-supervised pretraining of the victim encoder.
    Pretrain,
    /// Embed a watermark into a clean encoder.
    Embed {
        #[arg(long)]
        encoder: PathBuf,
        /// Skip the shadow encoder (ablation).
        #[arg(long)]
        no_shadow: bool,
    },
    /// Train a surrogate against a victim checkpoint with a configured attack.
    Steal {
        #[arg(long)]
        victim: PathBuf,
        #[arg(long, default_value = "steal-1")]
        attack: String,
    },
    /// Magnitude-prune every convolution layer.
    Prune {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        ratio: f32,
    },
    /// Fine-tune an encoder toward a victim with the cosine objective.
    Finetune {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        victim: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
    },
    /// Downstream probe accuracy of a frozen encoder.
    Probe {
        #[arg(long)]
        encoder: PathBuf,
    },
    /// Ownership verification of a suspect encoder against a key-tuple.
    Verify {
        #[arg(long)]
        suspect: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        th_w: Option<f32>,
        #[arg(long)]
        th_v: Option<f32>,
        /// Also write the report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the whole suite and write every table.
    Reproduce,
    /// Print the resolved experiment config as TOML.
    Config,
    /// Regenerate tables from a finished reproduce run.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => match common.scale {
            Scale::Desk => ExperimentConfig::desk(),
            Scale::Smoke => ExperimentConfig::smoke(),
        },
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = &common.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(d) = &common.data_dir {
        cfg.data.dir = Some(d.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_run(common: &Common, cfg: &ExperimentConfig, subcommand: &str) -> Result<RunDir> {
    let hash = cfg.hash()?;
    let run = match &common.run_dir {
        Some(p) => RunDir::at(p, subcommand, &hash, cfg.seed)?,
        None => RunDir::create(&cfg.output_dir, subcommand, &hash, cfg.seed)?,
    };
    run.write("config.toml", cfg.to_toml()?.as_bytes())?;
    Ok(run)
}

fn splits(cfg: &ExperimentConfig) -> Result<Splits> {
    Ok(build_splits(&cfg.data, &seed_everything(cfg.seed))?)
}

fn load_encoder(p: &Path) -> Result<Encoder> {
    Checkpoint::load_encoder(p).with_context(|| format!("loading encoder {}", p.display()))
}

fn save(run: &RunDir, rel: &str, enc: &Encoder, role: &str) -> Result<PathBuf> {
    let dir = run.join(rel);
    let prov = BTreeMap::from([("config_hash".to_string(), run.config_hash.clone()), ("role".to_string(), role.to_string())]);
    Checkpoint::save_encoder(&dir, enc, prov)?;
    Ok(dir)
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::Pretrain => {
            let cfg = load_config(common)?;
            let run = open_run(common, &cfg, "pretrain")?;
            let sp = splits(&cfg)?;
            let seeds = seed_everything(cfg.seed);
            let out = pretrain(sp.expect("train")?, &cfg.victim.spec, &cfg.victim.ssl, seeds.seed_for("pretrain"))?;
            let dir = save(&run, "checkpoints/clean", &out.encoder, "clean")?;
            run.write("losses.json", serde_json::to_string(&out.epoch_losses)?.as_bytes())?;
            run.finish()?;
            println!("encoder: {}", dir.display());
        }
        Command::Embed { encoder, no_shadow } => {
            let cfg = load_config(common)?;
            let clean = load_encoder(&encoder)?;
            let run = open_run(common, &cfg, "embed")?;
            let sp = splits(&cfg)?;
            let seeds = seed_everything(cfg.seed);
            let ecfg = EmbedConfig {
                seed: seeds.seed_for("embed/a"),
                use_shadow: !no_shadow,
                ..cfg.embed.clone()
            };
            let out = embed(&clean, sp.expect("train")?, sp.expect("shadow")?, sp.expect("private")?, &ecfg)?;
            let dir = save(&run, "checkpoints/watermarked", &out.watermarked, "watermarked")?;
            if let Some(sh) = &out.shadow {
                save(&run, "checkpoints/shadow", sh, "shadow")?;
            }
            let prov = BTreeMap::from([("config_hash".to_string(), run.config_hash.clone())]);
            out.key.save(&run.join("key"), prov)?;
            run.write("history.json", serde_json::to_string(&out.history)?.as_bytes())?;
            let wr = verify(&out.watermarked, &out.key, out.key.th_w, out.key.th_v)?.wr;
            run.finish()?;
            println!("watermarked: {}", dir.display());
            println!("key: {}", run.join("key").display());
            println!("WR(watermarked) = {wr:.4}");
        }
        Command::Steal { victim, attack } => {
            let cfg = load_config(common)?;
            let a = cfg.attack(&attack).with_context(|| format!("attack `{attack}` is not configured"))?.clone();
            let v = load_encoder(&victim)?;
            let run = open_run(common, &cfg, "steal")?;
            let sp = splits(&cfg)?;
            let out = steal(&VictimHandle::from_encoder(&v), sp.expect(&a.query_dataset)?, &a)?;
            let dir = save(&run, &format!("checkpoints/{attack}"), &out.surrogate, &attack)?;
            run.write("similarity.json", serde_json::to_string(&out.epoch_similarity)?.as_bytes())?;
            run.finish()?;
            println!("surrogate: {}", dir.display());
            println!("final similarity = {:.4}", out.epoch_similarity.last().copied().unwrap_or(0.0));
        }
        Command::Prune { encoder, ratio } => {
            let cfg = load_config(common)?;
            let e = load_encoder(&encoder)?;
            let pruned = prune(&e, ratio)?;
            let run = open_run(common, &cfg, "prune")?;
            let dir = save(&run, "checkpoints/pruned", &pruned, "pruned")?;
            run.finish()?;
            println!("pruned: {}", dir.display());
        }
        Command::Finetune { encoder, victim, epochs, lr } => {
            let cfg = load_config(common)?;
            let e = load_encoder(&encoder)?;
            let v = load_encoder(&victim)?;
            let run = open_run(common, &cfg, "finetune")?;
            let sp = splits(&cfg)?;
            let ft = FinetuneConfig {
                epochs: epochs.unwrap_or(cfg.removal.finetune.epochs),
                lr: lr.unwrap_or(cfg.removal.finetune.lr),
                ..cfg.removal.finetune.clone()
            };
            let tuned = finetune_under_victim(&e, &VictimHandle::from_encoder(&v), sp.expect(&cfg.removal.query_dataset)?, &ft)?;
            let dir = save(&run, "checkpoints/finetuned", &tuned, "finetuned")?;
            run.finish()?;
            println!("finetuned: {}", dir.display());
        }
        Command::Probe { encoder } => {
            let cfg = load_config(common)?;
            let e = load_encoder(&encoder)?;
            let sp = splits(&cfg)?;
            let seeds = seed_everything(cfg.seed);
            let da = probe_da(&e, sp.expect("probe_train")?, sp.expect("probe_test")?, &cfg.probe, seeds.seed_for("probe"))?;
            println!("DA = {da:.4}");
        }
        Command::Verify {
            suspect,
            key,
            th_w,
            th_v,
            report: out,
        } => {
            let s = load_encoder(&suspect)?;
            let k = KeyTuple::load(&key).with_context(|| format!("loading key-tuple {}", key.display()))?;
            let r = verify(&s, &k, th_w.unwrap_or(k.th_w), th_v.unwrap_or(k.th_v))?;
            if let Some(p) = out {
                r.save(&p)?;
            }
            println!("WR = {:.4}", r.wr);
            println!("verdict = {}", r.verdict as u8);
        }
        Command::Reproduce => {
            let cfg = load_config(common)?;
            let run = open_run(common, &cfg, "reproduce")?;
            let res = reproduce(&cfg, &run)?;
            println!("run: {}", run.path.display());
            for r in &res.table6 {
                println!("{}: WR {:.4} verdict {}", r.attack, r.wr, r.verdict as u8);
            }
        }
        Command::Config => {
            print!("{}", load_config(common)?.to_toml()?);
        }
        Command::Report { run: dir, out } => {
            let out = out.unwrap_or_else(|| dir.join("report"));
            if out.exists() && out.read_dir()?.next().is_some() {
                bail!("{} already holds files", out.display());
            }
            report(&dir, &out)?;
            println!("tables: {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
