use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{read_cifar10_bin, Dataset, Domain, SyntheticShapes};
use crate::digest::canonical_hash;
use crate::error::{ensure, Error, Result};
use crate::eval::ProbeConfig;
use crate::nets::{EncoderSpec, Family};
use crate::removal::FinetuneConfig;
use crate::rng::SeedRegistry;
use crate::ssl::SslConfig;
use crate::steal::{SimilarityKind, StealConfig};
use crate::wm::EmbedConfig;

/// Environment variable naming the default directory for on-disk corpora.
pub const DATA_DIR_ENV: &str = "SSLGUARD_DATA_DIR";

/// Names of the splits every experiment provides.
pub const SPLITS: [&str; 6] = ["train", "shadow", "private", "probe_train", "probe_test", "shifted"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic,
    Cifar10,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory holding `data_batch_*.bin` and `test_batch.bin`; falls
    /// back to the environment variable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub image_size: usize,
    pub train: usize,
    pub shadow: usize,
    pub private: usize,
    pub probe_train: usize,
    pub probe_test: usize,
    pub shifted: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            dir: None,
            image_size: 32,
            train: 2000,
            shadow: 1000,
            private: 50,
            probe_train: 1000,
            probe_test: 1000,
            shifted: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VictimConfig {
    pub spec: EncoderSpec,
    pub ssl: SslConfig,
}

impl Default for VictimConfig {
    fn default() -> Self {
        Self {
            spec: EncoderSpec::new(Family::TinyCnn, 64),
            ssl: SslConfig {
                epochs: 10,
                ..SslConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemovalConfig {
    pub ratios: Vec<f32>,
    /// Steal attack whose surrogate is pruned alongside the watermarked encoder.
    pub surrogate: String,
    pub query_dataset: String,
    pub finetune: FinetuneConfig,
}

impl Default for RemovalConfig {
    fn default() -> Self {
        Self {
            ratios: vec![0.1, 0.3, 0.5],
            surrogate: "steal-1".into(),
            query_dataset: "train".into(),
            finetune: FinetuneConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    pub n_seeds: usize,
    /// Attacks repeated per seed and used for the no-shadow ablation.
    pub attacks: Vec<String>,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            n_seeds: 3,
            attacks: vec!["steal-1".into(), "steal-2".into(), "steal-3".into()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub victim: VictimConfig,
    pub embed: EmbedConfig,
    pub probe: ProbeConfig,
    pub steal: Vec<StealConfig>,
    pub removal: RemovalConfig,
    pub trials: TrialConfig,
    /// Random reference vectors for the null histogram.
    pub histogram_references: usize,
}

pub fn default_attacks() -> Vec<StealConfig> {
    let attack = |name: &str, family: Family, queries: &str, kind: SimilarityKind| {
        let mut c = StealConfig::new(name, EncoderSpec::new(family, 64), queries, kind);
        c.epochs = 40;
        c.lr = 0.05;
        c
    };
    vec![
        attack("steal-1", Family::ResnetSmall, "train", SimilarityKind::Cosine),
        attack("steal-2", Family::ResnetSmall, "shifted", SimilarityKind::Cosine),
        attack("steal-3", Family::ResnetWide, "train", SimilarityKind::Cosine),
        attack("steal-1-mae", Family::ResnetSmall, "train", SimilarityKind::Mae),
    ]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "desk".into(),
            seed: 0,
            output_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            victim: VictimConfig::default(),
            embed: EmbedConfig::default(),
            probe: ProbeConfig::default(),
            steal: default_attacks(),
            removal: RemovalConfig::default(),
            trials: TrialConfig::default(),
            histogram_references: 1000,
        }
    }
}

impl ExperimentConfig {
    /// The default desk-scale suite.
    pub fn desk() -> Self {
        Self::default()
    }

    /// A reduced suite that exercises every stage in a few minutes.
    pub fn smoke() -> Self {
        let mut c = Self {
            name: "smoke".into(),
            data: DataConfig {
                train: 256,
                shadow: 128,
                private: 16,
                probe_train: 200,
                probe_test: 200,
                shifted: 256,
                ..DataConfig::default()
            },
            histogram_references: 50,
            ..Self::default()
        };
        c.victim.spec = EncoderSpec::new(Family::TinyCnn, 16);
        c.victim.ssl.epochs = 1;
        c.embed.steps = 5;
        c.embed.batch_train = 32;
        c.embed.batch_shadow = 32;
        c.embed.batch_verify = 16;
        c.embed.key_dim = 16;
        c.embed.shadow_spec = EncoderSpec::new(Family::TinyCnn, 16);
        c.probe.epochs = 2;
        for a in &mut c.steal {
            a.surrogate_spec = EncoderSpec::new(Family::TinyCnn, 16);
            a.epochs = 1;
        }
        c.removal.ratios = vec![0.5];
        c.removal.finetune.epochs = 1;
        c.trials.n_seeds = 1;
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("experiment config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Stable under key reordering in the source document.
    pub fn hash(&self) -> Result<String> {
        canonical_hash(self)
    }

    pub fn attack(&self, name: &str) -> Option<&StealConfig> {
        self.steal.iter().find(|a| a.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        self.victim.spec.validate()?;
        self.victim.ssl.validate()?;
        self.embed.validate()?;
        self.probe.validate()?;
        let d = &self.data;
        for (name, n) in [("train", d.train), ("private", d.private), ("probe_train", d.probe_train), ("probe_test", d.probe_test)] {
            ensure!(n > 0, Config, "data split `{name}` must be non-empty");
        }
        let mut names = std::collections::BTreeSet::new();
        for a in &self.steal {
            a.validate()?;
            ensure!(names.insert(a.name.as_str()), Config, "duplicate attack name `{}`", a.name);
            ensure!(
                SPLITS.contains(&a.query_dataset.as_str()),
                Config,
                "attack `{}` queries unknown dataset `{}`",
                a.name,
                a.query_dataset
            );
        }
        ensure!(
            SPLITS.contains(&self.removal.query_dataset.as_str()),
            Config,
            "removal queries unknown dataset `{}`",
            self.removal.query_dataset
        );
        for r in &self.removal.ratios {
            crate::removal::PruneConfig { r: *r }.validate()?;
        }
        let known = |n: &str| self.attack(n).is_some();
        ensure!(
            self.removal.ratios.is_empty() || known(&self.removal.surrogate),
            Config,
            "removal surrogate `{}` is not a configured attack",
            self.removal.surrogate
        );
        for a in &self.trials.attacks {
            ensure!(known(a), Config, "trial attack `{a}` is not a configured attack");
        }
        ensure!(self.trials.n_seeds >= 1, Config, "trials need at least one seed");
        Ok(())
    }
}

/// Seeded named streams for a run.
pub fn seed_everything(global_seed: u64) -> SeedRegistry {
    SeedRegistry::new(global_seed)
}

/// All splits of an experiment, keyed by split name.
#[derive(Clone, Debug)]
pub struct Splits {
    sets: BTreeMap<String, Dataset>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Option<&Dataset> {
        self.sets.get(name)
    }

    pub fn expect(&self, name: &str) -> Result<&Dataset> {
        self.get(name).ok_or_else(|| Error::Config(format!("unknown dataset `{name}`")))
    }
}

fn cifar_dir(cfg: &DataConfig) -> Result<PathBuf> {
    cfg.dir
        .clone()
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| Error::Config(format!("CIFAR-10 source needs data.dir or {DATA_DIR_ENV}")))
}

/// Materialize every split. Synthetic splits use disjoint seeds from the
/// registry; CIFAR-10 splits are consecutive slices of the training batches,
/// with the probe test split taken from the test batch. The shifted split is
/// always the synthetic shifted domain.
pub fn build_splits(cfg: &DataConfig, seeds: &SeedRegistry) -> Result<Splits> {
    let s = cfg.image_size;
    let mut sets = BTreeMap::new();
    let sizes = [
        ("train", cfg.train),
        ("shadow", cfg.shadow),
        ("private", cfg.private),
        ("probe_train", cfg.probe_train),
        ("probe_test", cfg.probe_test),
    ];
    match cfg.source {
        DataSource::Synthetic => {
            let gen = SyntheticShapes::new(Domain::Primary, s);
            for (name, n) in sizes {
                let mut ds = gen.generate(n, seeds.seed_for(&format!("data/{name}")));
                ds.name = name.into();
                sets.insert(name.to_string(), ds);
            }
        }
        DataSource::Cifar10 => {
            ensure!(s == 32, Config, "CIFAR-10 images are 32x32");
            let dir = cifar_dir(cfg)?;
            let mut images = Vec::new();
            let mut labels = Vec::new();
            for i in 1..=5 {
                let path = dir.join(format!("data_batch_{i}.bin"));
                if !path.exists() {
                    continue;
                }
                let ds = read_cifar10_bin(&path)?;
                labels.extend_from_slice(ds.labels().expect("labeled"));
                images.extend_from_slice(ds.images());
            }
            let test = read_cifar10_bin(&dir.join("test_batch.bin"))?;
            let all = Dataset::new("cifar10", images, Some(labels))?;
            let mut start = 0;
            for (name, n) in sizes {
                let ds = if name == "probe_test" {
                    ensure!(n <= test.len(), Input, "test batch has {} images, {n} requested", test.len());
                    test.subset(&(0..n).collect::<Vec<_>>(), name)
                } else {
                    ensure!(start + n <= all.len(), Input, "training batches hold {} images, split `{name}` needs more", all.len());
                    let ds = all.subset(&(start..start + n).collect::<Vec<_>>(), name);
                    start += n;
                    ds
                };
                sets.insert(name.to_string(), ds);
            }
        }
    }
    let mut shifted = SyntheticShapes::new(Domain::Shifted, s).generate(cfg.shifted, seeds.seed_for("data/shifted"));
    shifted.name = "shifted".into();
    sets.insert("shifted".into(), shifted);
    Ok(Splits { sets })
}
