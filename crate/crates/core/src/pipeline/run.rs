use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{ensure, Error, Result};

pub const RUN_MANIFEST: &str = "manifest.json";

/// Self-describing record of a run directory. Holds no timestamps so that
/// reruns with the same inputs produce identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    /// Relative path -> sha256 of every file in the run, except the manifest.
    pub artifacts: BTreeMap<String, String>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

/// An append-only output directory for one subcommand invocation.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub path: PathBuf,
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    pub notes: BTreeMap<String, String>,
}

impl RunDir {
    /// New directory `<root>/<subcommand>-<unix secs>-<hash prefix>`, with a
    /// numeric suffix if that name is taken.
    pub fn create(root: &Path, subcommand: &str, config_hash: &str, seed: u64) -> Result<Self> {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let stem = format!("{subcommand}-{secs}-{}", &config_hash[..config_hash.len().min(8)]);
        let mut path = root.join(&stem);
        let mut n = 1;
        while path.exists() {
            path = root.join(format!("{stem}-{n}"));
            n += 1;
        }
        Self::at(&path, subcommand, config_hash, seed)
    }

    /// Use an explicit directory, which must be absent or empty.
    pub fn at(path: &Path, subcommand: &str, config_hash: &str, seed: u64) -> Result<Self> {
        if path.exists() {
            let mut entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
            ensure!(entries.next().is_none(), Input, "run directory {} is not empty", path.display());
        }
        fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            subcommand: subcommand.into(),
            config_hash: config_hash.into(),
            seed,
            notes: BTreeMap::new(),
        })
    }

    pub fn join(&self, rel: &str) -> PathBuf {
        self.path.join(rel)
    }

    pub fn write(&self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    /// Hash every file and write the manifest.
    pub fn finish(&self) -> Result<RunManifest> {
        let manifest = RunManifest {
            subcommand: self.subcommand.clone(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            artifacts: hash_tree(&self.path)?,
            notes: self.notes.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        self.write(RUN_MANIFEST, text.as_bytes())?;
        Ok(manifest)
    }
}

fn collect(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect(root, &p, out)?;
            continue;
        }
        let rel = p.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
        if rel == RUN_MANIFEST {
            continue;
        }
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        out.insert(rel, sha256_hex(&bytes));
    }
    Ok(())
}

fn hash_tree(root: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    collect(root, root, &mut out)?;
    Ok(out)
}

/// Load a run manifest and check every listed artifact against its hash.
pub fn verify_run(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(RUN_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    for (rel, want) in &manifest.artifacts {
        let p = dir.join(rel);
        let bytes = fs::read(&p).map_err(|_| Error::Integrity {
            field: rel.clone(),
            reason: "artifact is missing".into(),
        })?;
        if &sha256_hex(&bytes) != want {
            return Err(Error::Integrity {
                field: rel.clone(),
                reason: "content hash differs from the run manifest".into(),
            });
        }
    }
    Ok(manifest)
}
