pub mod data;
pub mod digest;
pub mod error;
pub mod eval;
pub mod nets;
pub mod optim;
pub mod pipeline;
pub mod removal;
pub mod rng;
pub mod ssl;
pub mod steal;
pub mod tensor;
pub mod wm;

pub use error::{Error, Result};

pub use data::{Dataset, Image};
pub use eval::{ProbeConfig, WatermarkReport};
pub use nets::{Checkpoint, Decoder, Encoder, EncoderSpec, Family, FeatureBatch};
pub use pipeline::{ExperimentConfig, ReproduceResults, RunDir};
pub use steal::{SimilarityKind, StealConfig, VictimHandle};
pub use wm::{EmbedConfig, KeyTuple, Mask, Trigger};
