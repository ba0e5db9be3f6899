use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Histogram, TrialTable};
use crate::removal::{removal_csv, RemovalRow};

pub const RESULTS_FILE: &str = "results.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderWr {
    pub encoder: String,
    pub wr: f32,
    pub verdict: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub encoder: String,
    pub da: f32,
    /// Mean cos to the clean encoder on the probe test split.
    pub cos_to_clean: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossKeyRow {
    pub encoder: String,
    pub key: String,
    pub wr: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub attack: String,
    pub surrogate: String,
    pub queries: String,
    pub similarity: String,
    pub final_similarity: f32,
    pub da: f32,
    pub wr: f32,
    pub mean_key_cos: f32,
    pub verdict: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub attack: String,
    pub wr_with_shadow: f32,
    pub wr_without_shadow: f32,
}

/// Everything `reproduce` measures. CSV tables are pure renderings of
/// this record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproduceResults {
    pub config_hash: String,
    pub table2: Vec<EncoderWr>,
    pub table3: Vec<FidelityRow>,
    pub table4: Vec<CrossKeyRow>,
    pub table6: Vec<AttackRow>,
    pub table7: Vec<RemovalRow>,
    pub fig7_key: Histogram,
    pub fig7_random: Histogram,
    pub fig8: TrialTable,
    /// WR of the watermarked encoder embedded without a shadow encoder.
    pub ablation_watermarked_wr: f32,
    pub ablation: Vec<AblationRow>,
}

fn b(v: bool) -> u8 {
    v as u8
}

impl ReproduceResults {
    pub fn attack(&self, name: &str) -> Option<&AttackRow> {
        self.table6.iter().find(|r| r.attack == name)
    }

    pub fn wr_of(&self, encoder: &str) -> Option<f32> {
        self.table2.iter().find(|r| r.encoder == encoder).map(|r| r.wr)
    }

    pub fn csv_files(&self) -> Vec<(&'static str, String)> {
        let mut t2 = String::from("encoder,wr,verdict\n");
        for r in &self.table2 {
            writeln!(t2, "{},{:.4},{}", r.encoder, r.wr, b(r.verdict)).expect("string write");
        }
        let mut t3 = String::from("encoder,da,cos_to_clean\n");
        for r in &self.table3 {
            writeln!(t3, "{},{:.4},{:.4}", r.encoder, r.da, r.cos_to_clean).expect("string write");
        }
        let mut t4 = String::from("encoder,key,wr\n");
        for r in &self.table4 {
            writeln!(t4, "{},{},{:.4}", r.encoder, r.key, r.wr).expect("string write");
        }
        let mut t6 = String::from("attack,surrogate,queries,similarity,final_similarity,da,wr,mean_key_cos,verdict\n");
        for r in &self.table6 {
            writeln!(
                t6,
                "{},{},{},{},{:.4},{:.4},{:.4},{:.4},{}",
                r.attack,
                r.surrogate,
                r.queries,
                r.similarity,
                r.final_similarity,
                r.da,
                r.wr,
                r.mean_key_cos,
                b(r.verdict)
            )
            .expect("string write");
        }
        let mut f7 = String::from("reference,lower,upper,count\n");
        f7.push_str(&self.fig7_key.to_csv("sk"));
        f7.push_str(&self.fig7_random.to_csv("random"));
        let mut ab = String::from("attack,wr_with_shadow,wr_without_shadow\n");
        writeln!(ab, "watermarked,{:.4},{:.4}", self.wr_of("watermarked").unwrap_or(0.0), self.ablation_watermarked_wr)
            .expect("string write");
        for r in &self.ablation {
            writeln!(ab, "{},{:.4},{:.4}", r.attack, r.wr_with_shadow, r.wr_without_shadow).expect("string write");
        }
        vec![
            ("table2.csv", t2),
            ("table3.csv", t3),
            ("table4.csv", t4),
            ("table6.csv", t6),
            ("table7.csv", removal_csv(&self.table7)),
            ("fig7.csv", f7),
            ("fig8.csv", self.fig8.to_csv()),
            ("ablation.csv", ab),
        ]
    }

    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in self.csv_files() {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
