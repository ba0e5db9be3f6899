//! Checkpoint directories: `manifest.json` plus `params.bin`, a flat blob of
//! little-endian `f32` values in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DecoderSpec, Encoder, EncoderSpec, Mlp, ParamKind, ParamVector};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Encoder { spec: EncoderSpec, norm_frozen: bool },
    Mlp { spec: DecoderSpec },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    /// Offset in `f32` elements from the start of the blob.
    pub offset: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub model: ModelSpec,
    pub seed: u64,
    pub numel: usize,
    pub blob_sha256: String,
    pub params: Vec<ParamEntry>,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

pub struct Checkpoint;

fn manifest_for(model: ModelSpec, seed: u64, params: &ParamVector, provenance: BTreeMap<String, String>) -> (CheckpointManifest, Vec<u8>) {
    let blob = params.to_le_bytes();
    let mut offset = 0;
    let entries = params
        .iter()
        .map(|p| {
            let e = ParamEntry {
                name: p.name.clone(),
                kind: p.kind,
                shape: p.shape.clone(),
                offset,
                trainable: p.trainable,
            };
            offset += p.data.len();
            e
        })
        .collect();
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        model,
        seed,
        numel: params.numel(),
        blob_sha256: hex::encode(Sha256::digest(&blob)),
        params: entries,
        provenance,
    };
    (manifest, blob)
}

fn write_dir(dir: &Path, manifest: &CheckpointManifest, blob: &[u8]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mpath = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    let bpath = dir.join(BLOB_FILE);
    fs::write(&bpath, blob).map_err(|e| Error::io(&bpath, e))?;
    Ok(())
}

fn read_dir(dir: &Path) -> Result<(CheckpointManifest, Vec<f32>)> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::integrity(MANIFEST_FILE, e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::integrity(
            "format_version",
            format!("unsupported version {}", manifest.format_version),
        ));
    }
    let bpath = dir.join(BLOB_FILE);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    if blob.len() != manifest.numel * 4 {
        return Err(Error::integrity(
            BLOB_FILE,
            format!("{} bytes, manifest declares {} f32 values", blob.len(), manifest.numel),
        ));
    }
    let digest = hex::encode(Sha256::digest(&blob));
    if digest != manifest.blob_sha256 {
        return Err(Error::integrity(BLOB_FILE, "sha256 mismatch"));
    }
    let values = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((manifest, values))
}

/// Overwrite a freshly built network's parameters with checkpoint values,
/// checking names and shapes entry by entry.
fn restore(params: &mut ParamVector, manifest: &CheckpointManifest, values: &[f32]) -> Result<()> {
    if params.len() != manifest.params.len() {
        return Err(Error::integrity(
            "params",
            format!("{} entries, architecture has {}", manifest.params.len(), params.len()),
        ));
    }
    for (p, e) in params.iter_mut().zip(&manifest.params) {
        if p.name != e.name || p.shape != e.shape || p.kind != e.kind {
            return Err(Error::integrity(
                e.name.clone(),
                format!("entry does not match architecture parameter {} {:?}", p.name, p.shape),
            ));
        }
        let n = p.data.len();
        let slice = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::integrity(e.name.clone(), "offset out of range"))?;
        p.data.copy_from_slice(slice);
        p.trainable = e.trainable;
    }
    Ok(())
}

impl Checkpoint {
    pub fn save_encoder(dir: &Path, enc: &Encoder, provenance: BTreeMap<String, String>) -> Result<CheckpointManifest> {
        let model = ModelSpec::Encoder {
            spec: enc.spec().clone(),
            norm_frozen: enc.norm_frozen(),
        };
        let (manifest, blob) = manifest_for(model, enc.seed(), enc.params(), provenance);
        write_dir(dir, &manifest, &blob)?;
        Ok(manifest)
    }

    pub fn load_encoder(dir: &Path) -> Result<Encoder> {
        Self::load_encoder_with_manifest(dir).map(|(e, _)| e)
    }

    pub fn load_encoder_with_manifest(dir: &Path) -> Result<(Encoder, CheckpointManifest)> {
        let (manifest, values) = read_dir(dir)?;
        let ModelSpec::Encoder { spec, norm_frozen } = &manifest.model else {
            return Err(Error::integrity("model", "checkpoint does not hold an encoder"));
        };
        let mut enc = Encoder::build(spec, manifest.seed)?;
        restore(enc.params_mut(), &manifest, &values)?;
        enc.set_norm_frozen(*norm_frozen);
        Ok((enc, manifest))
    }

    pub fn save_mlp(dir: &Path, mlp: &Mlp, provenance: BTreeMap<String, String>) -> Result<CheckpointManifest> {
        let model = ModelSpec::Mlp { spec: mlp.spec().clone() };
        let (manifest, blob) = manifest_for(model, mlp.seed(), mlp.params(), provenance);
        write_dir(dir, &manifest, &blob)?;
        Ok(manifest)
    }

    pub fn load_mlp(dir: &Path) -> Result<Mlp> {
        let (manifest, values) = read_dir(dir)?;
        let ModelSpec::Mlp { spec } = &manifest.model else {
            return Err(Error::integrity("model", "checkpoint does not hold an MLP"));
        };
        let mut mlp = Mlp::build(spec, manifest.seed)?;
        restore(mlp.params_mut(), &manifest, &values)?;
        Ok(mlp)
    }

    /// Blob digest recorded in a checkpoint directory's manifest.
    pub fn digest(dir: &Path) -> Result<String> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let m: CheckpointManifest = serde_json::from_str(&text)?;
        Ok(m.blob_sha256)
    }
}
