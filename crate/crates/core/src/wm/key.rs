use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::loss::key_cosines;
use super::{apply_trigger, Mask, Trigger};
use crate::data::Image;
use crate::error::{ensure, Error, Result};
use crate::eval::WatermarkReport;
use crate::nets::{Checkpoint, Decoder, Encoder};

const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "key.json";
const DECODER_DIR: &str = "decoder";

/// Ownership credential: verification images, decoder and secret key,
/// plus the private images and trigger they were built from.
#[derive(Clone, Debug)]
pub struct KeyTuple {
    pub private: Vec<Image>,
    pub verification: Vec<Image>,
    pub trigger: Trigger,
    pub mask: Mask,
    pub decoder: Decoder,
    pub sk: Vec<f32>,
    pub th_w: f32,
    pub th_v: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub numel: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyManifest {
    pub format_version: u32,
    pub key_id: String,
    pub key_dim: usize,
    pub feature_dim: usize,
    /// (H, W, C)
    pub image_shape: (usize, usize, usize),
    pub num_samples: usize,
    pub mask_side: usize,
    pub th_w: f32,
    pub th_v: f32,
    pub files: BTreeMap<String, BlobEntry>,
    pub decoder_sha256: String,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

fn f32_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn write_blob(dir: &Path, name: &str, v: &[f32], files: &mut BTreeMap<String, BlobEntry>) -> Result<()> {
    let bytes = f32_bytes(v);
    let path = dir.join(name);
    fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    files.insert(
        name.to_string(),
        BlobEntry {
            numel: v.len(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        },
    );
    Ok(())
}

fn read_blob(dir: &Path, name: &str, manifest: &KeyManifest, expect: usize) -> Result<Vec<f32>> {
    let entry = manifest
        .files
        .get(name)
        .ok_or_else(|| Error::integrity(name, "missing from manifest"))?;
    if entry.numel != expect {
        return Err(Error::integrity(name, format!("declares {} values, expected {expect}", entry.numel)));
    }
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != expect * 4 {
        return Err(Error::integrity(name, format!("{} bytes, expected {}", bytes.len(), expect * 4)));
    }
    if hex::encode(Sha256::digest(&bytes)) != entry.sha256 {
        return Err(Error::integrity(name, "sha256 mismatch"));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

fn flat(images: &[Image]) -> Vec<f32> {
    images.iter().flat_map(|im| im.data().iter().copied()).collect()
}

fn unflat(data: &[f32], shape: (usize, usize, usize)) -> Result<Vec<Image>> {
    let per = shape.0 * shape.1 * shape.2;
    data.chunks_exact(per)
        .map(|c| Image::from_chw(shape.0, shape.1, shape.2, c.to_vec()))
        .collect()
}

impl KeyTuple {
    /// Assemble a key tuple; the verification set is `P(x_p, T)` for every
    /// private image.
    pub fn new(private: Vec<Image>, trigger: Trigger, mask: Mask, decoder: Decoder, sk: Vec<f32>, th_w: f32, th_v: f32) -> Result<Self> {
        ensure!(!private.is_empty(), Input, "key tuple needs at least one private image");
        ensure!(sk.len() == decoder.key_dim(), Input, "sk has {} entries, decoder emits {}", sk.len(), decoder.key_dim());
        let norm = sk.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        ensure!((norm - 1.0).abs() < 1e-5, Numeric, "sk must be unit norm, got {norm}");
        let verification = private
            .iter()
            .map(|x| apply_trigger(x, &trigger, &mask))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            private,
            verification,
            trigger,
            mask,
            decoder,
            sk,
            th_w,
            th_v,
        })
    }

    pub fn len(&self) -> usize {
        self.verification.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verification.is_empty()
    }

    pub fn key_dim(&self) -> usize {
        self.sk.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.decoder.input_dim()
    }

    /// Short content hash of sk, trigger and decoder parameters.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        h.update(f32_bytes(&self.sk));
        h.update(f32_bytes(&self.trigger.data));
        h.update(self.decoder.mlp().params().to_le_bytes());
        hex::encode(&h.finalize()[..8])
    }

    pub fn save(&self, dir: &Path, provenance: BTreeMap<String, String>) -> Result<KeyManifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = BTreeMap::new();
        write_blob(dir, "sk.bin", &self.sk, &mut files)?;
        write_blob(dir, "trigger.bin", &self.trigger.data, &mut files)?;
        write_blob(dir, "mask.bin", &self.mask.data, &mut files)?;
        write_blob(dir, "private.bin", &flat(&self.private), &mut files)?;
        write_blob(dir, "verification.bin", &flat(&self.verification), &mut files)?;
        let dm = Checkpoint::save_mlp(&dir.join(DECODER_DIR), self.decoder.mlp(), BTreeMap::new())?;
        let manifest = KeyManifest {
            format_version: FORMAT_VERSION,
            key_id: self.id(),
            key_dim: self.key_dim(),
            feature_dim: self.feature_dim(),
            image_shape: self.trigger.shape,
            num_samples: self.len(),
            mask_side: self.mask.side,
            th_w: self.th_w,
            th_v: self.th_v,
            files,
            decoder_sha256: dm.blob_sha256,
            provenance,
        };
        let path = dir.join(MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::load_with_manifest(dir).map(|(k, _)| k)
    }

    pub fn load_with_manifest(dir: &Path) -> Result<(Self, KeyManifest)> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: KeyManifest = serde_json::from_str(&text).map_err(|e| Error::integrity(MANIFEST, e.to_string()))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::integrity("format_version", format!("unsupported version {}", m.format_version)));
        }
        let shape = m.image_shape;
        let per = shape.0 * shape.1 * shape.2;
        let sk = read_blob(dir, "sk.bin", &m, m.key_dim)?;
        let trigger = Trigger::from_data(shape, read_blob(dir, "trigger.bin", &m, per)?)?;
        let mask_data = read_blob(dir, "mask.bin", &m, per)?;
        let private = unflat(&read_blob(dir, "private.bin", &m, per * m.num_samples)?, shape)?;
        let verification = unflat(&read_blob(dir, "verification.bin", &m, per * m.num_samples)?, shape)?;
        if Checkpoint::digest(&dir.join(DECODER_DIR))? != m.decoder_sha256 {
            return Err(Error::integrity(DECODER_DIR, "decoder digest differs from key manifest"));
        }
        let decoder = Decoder(Checkpoint::load_mlp(&dir.join(DECODER_DIR))?);
        let mask = Mask {
            shape,
            side: m.mask_side,
            data: mask_data,
        };
        let key = KeyTuple::new(private, trigger, mask, decoder, sk, m.th_w, m.th_v)?;
        if key.verification != verification {
            return Err(Error::integrity("verification.bin", "stored images are not the triggered private images"));
        }
        if key.feature_dim() != m.feature_dim || key.id() != m.key_id {
            return Err(Error::integrity("key_id", "manifest does not describe the stored key"));
        }
        Ok((key, m))
    }
}

/// Per-sample cosine between decoded keys of the verification set and sk.
pub fn extract(suspect: &Encoder, key: &KeyTuple) -> Result<Vec<f32>> {
    ensure!(
        suspect.output_dim() == key.feature_dim(),
        Input,
        "suspect feature width {} differs from decoder input width {}",
        suspect.output_dim(),
        key.feature_dim()
    );
    let features = suspect.encode(&key.verification)?;
    let decoded = key.decoder.decode(&features)?;
    Ok(key_cosines(&decoded.to_tensor(), &key.sk).to_vec())
}

/// Fraction of similarities strictly above `th_w`.
pub fn watermark_rate(similarities: &[f32], th_w: f32) -> f32 {
    if similarities.is_empty() {
        return 0.0;
    }
    similarities.iter().filter(|&&s| s > th_w).count() as f32 / similarities.len() as f32
}

pub fn watermark_rate_of(suspect: &Encoder, key: &KeyTuple, th_w: f32) -> Result<f32> {
    Ok(watermark_rate(&extract(suspect, key)?, th_w))
}

/// Ownership test: verdict is positive iff WR > th_v.
pub fn verify(suspect: &Encoder, key: &KeyTuple, th_w: f32, th_v: f32) -> Result<WatermarkReport> {
    let sims = extract(suspect, key)?;
    let mut report = WatermarkReport::from_similarities(sims, th_w, th_v);
    report.encoder_id = suspect.params().digest();
    report.key_id = key.id();
    Ok(report)
}
