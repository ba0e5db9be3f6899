//! Downstream probes, watermark statistics and report records.

mod probe;
mod report;
mod stats;
mod trial;

pub use probe::{accuracy, downstream_accuracy, probe_da, train_probe, train_probe_on_features, Classifier, ProbeConfig};
pub use report::WatermarkReport;
pub use stats::{angle_pdf, similarity_histogram, Histogram, HIST_BIN_WIDTH};
pub use trial::{model_level_trial, TrialRow, TrialTable};
