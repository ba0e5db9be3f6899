use serde::{Deserialize, Serialize};

use crate::data::{minibatches, Dataset};
use crate::error::{ensure, Error, Result};
use crate::nets::{Activation, DecoderSpec, Encoder, FeatureBatch, Mlp};
use crate::optim::{Adam, Optimizer};
use crate::rng::{derive_seed, rng_from};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub hidden_width: usize,
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            // 256 hidden units scaled by the feature width ratio 64/512
            hidden_width: 32,
            epochs: 20,
            lr: 0.005,
            batch_size: 64,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.hidden_width > 0, Config, "probe hidden_width must be positive");
        ensure!(self.epochs > 0, Config, "probe epochs must be positive");
        ensure!(self.batch_size > 0, Config, "probe batch_size must be positive");
        ensure!(self.lr > 0.0, Config, "probe lr must be positive");
        Ok(())
    }
}

/// Two-layer classifier over frozen encoder features.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub mlp: Mlp,
    pub num_classes: usize,
}

impl Classifier {
    pub fn predict(&self, features: &FeatureBatch) -> Result<Vec<usize>> {
        self.mlp.check_input(features.dim())?;
        let logits = self.mlp.apply(&features.to_tensor());
        let c = self.num_classes;
        Ok(logits
            .data()
            .chunks(c)
            .map(|row| {
                // first maximum wins on ties
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

/// Train a classifier on precomputed features.
pub fn train_probe_on_features(features: &FeatureBatch, labels: &[usize], cfg: &ProbeConfig, seed: u64) -> Result<Classifier> {
    cfg.validate()?;
    ensure!(features.rows() == labels.len(), Input, "{} feature rows for {} labels", features.rows(), labels.len());
    ensure!(!labels.is_empty(), Input, "probe training set is empty");
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let distinct = {
        let mut seen = vec![false; num_classes];
        labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&s| s).count()
    };
    ensure!(distinct >= 2, Config, "probe training data has a single class");
    let spec = DecoderSpec {
        input_dim: features.dim(),
        layer_widths: vec![cfg.hidden_width, num_classes],
        activation: Activation::Relu,
    };
    let mut mlp = Mlp::build(&spec, derive_seed(seed, &["probe", "init"]))?;
    let mut opt = Adam::new(cfg.lr);
    let mut rng = rng_from(derive_seed(seed, &["probe", "order"]));
    for _ in 0..cfg.epochs {
        for idx in minibatches(features.rows(), cfg.batch_size, &mut rng, true) {
            let x = features.select(&idx).to_tensor();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (logits, bound) = mlp.forward_tracked(&x);
            let loss = logits.cross_entropy(&y, false);
            let mut g = loss.backward();
            let grads = bound.grads(&mut g);
            opt.step(mlp.params_mut(), &grads);
        }
    }
    Ok(Classifier { mlp, num_classes })
}

/// Train a downstream classifier on features of a frozen encoder. The
/// encoder is only read.
pub fn train_probe(encoder: &Encoder, dataset: &Dataset, cfg: &ProbeConfig, seed: u64) -> Result<Classifier> {
    let labels = dataset
        .labels()
        .ok_or_else(|| Error::Input(format!("dataset `{}` has no labels", dataset.name)))?;
    let features = encoder.encode(dataset.images())?;
    train_probe_on_features(&features, labels, cfg, seed)
}

/// Fraction of correctly classified samples.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f32> {
    ensure!(!labels.is_empty(), Input, "evaluation split is empty");
    ensure!(predictions.len() == labels.len(), Input, "prediction/label count mismatch");
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f32 / labels.len() as f32)
}

pub fn downstream_accuracy(encoder: &Encoder, classifier: &Classifier, test: &Dataset) -> Result<f32> {
    ensure!(!test.is_empty(), Input, "evaluation split is empty");
    let labels = test
        .labels()
        .ok_or_else(|| Error::Input(format!("dataset `{}` has no labels", test.name)))?;
    let features = encoder.encode(test.images())?;
    accuracy(&classifier.predict(&features)?, labels)
}

/// Probe training on `train` then accuracy on `test`.
pub fn probe_da(encoder: &Encoder, train: &Dataset, test: &Dataset, cfg: &ProbeConfig, seed: u64) -> Result<f32> {
    let clf = train_probe(encoder, train, cfg, seed)?;
    downstream_accuracy(encoder, &clf, test)
}
