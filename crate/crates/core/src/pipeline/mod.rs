//! Experiment configs, run directories and end-to-end orchestration.

mod config;
mod reproduce;
mod results;
mod run;

pub use config::{
    build_splits, default_attacks, seed_everything, DataConfig, DataSource, ExperimentConfig, RemovalConfig, Splits, TrialConfig, VictimConfig,
    DATA_DIR_ENV, SPLITS,
};
pub use reproduce::{report, reproduce};
pub use results::{AblationRow, AttackRow, CrossKeyRow, EncoderWr, FidelityRow, ReproduceResults, RESULTS_FILE};
pub use run::{verify_run, RunDir, RunManifest, RUN_MANIFEST};

#[cfg(test)]
mod tests;
