use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wm::watermark_rate;

/// Outcome of one ownership verification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WatermarkReport {
    pub wr: f32,
    pub similarities: Vec<f32>,
    pub verdict: bool,
    pub th_w: f32,
    pub th_v: f32,
    #[serde(default)]
    pub da: BTreeMap<String, f32>,
    #[serde(default)]
    pub encoder_id: String,
    #[serde(default)]
    pub key_id: String,
    #[serde(default)]
    pub config_hash: String,
}

impl WatermarkReport {
    pub fn from_similarities(similarities: Vec<f32>, th_w: f32, th_v: f32) -> Self {
        let wr = watermark_rate(&similarities, th_w);
        Self {
            wr,
            similarities,
            verdict: wr > th_v,
            th_w,
            th_v,
            da: BTreeMap::new(),
            encoder_id: String::new(),
            key_id: String::new(),
            config_hash: String::new(),
        }
    }

    /// WR recomputed from the stored similarities and threshold.
    pub fn recomputed_wr(&self) -> f32 {
        watermark_rate(&self.similarities, self.th_w)
    }

    pub fn mean_similarity(&self) -> f32 {
        if self.similarities.is_empty() {
            return 0.0;
        }
        (self.similarities.iter().map(|&s| s as f64).sum::<f64>() / self.similarities.len() as f64) as f32
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
