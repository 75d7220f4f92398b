use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, HarnessError};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical config text; execution-only settings are excluded.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    sha256_hex(cfg.canonical().to_toml_string().as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    pub dataset_hash: String,
    /// Checkpoint path to SHA-256.
    pub checkpoints: BTreeMap<String, String>,
    /// Every produced file (checkpoints included) to SHA-256.
    pub files: BTreeMap<String, String>,
}

/// Files written under one output directory, in production order.
#[derive(Debug)]
pub struct Artifacts {
    root: PathBuf,
    files: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(root: &Path) -> Result<Self, HarnessError> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), HarnessError> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.add(rel);
        Ok(())
    }

    /// Records a file that was written by someone else.
    pub fn add(&mut self, rel: &str) {
        let rel = PathBuf::from(rel);
        if !self.files.contains(&rel) {
            self.files.push(rel);
        }
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }
}

fn slash_path(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Hashes every recorded artifact and writes `manifest.json` next to them.
pub fn emit_manifest(
    cfg: &ExperimentConfig,
    subcommand: &str,
    artifacts: &Artifacts,
    dataset_hash: &str,
) -> Result<Manifest, HarnessError> {
    let mut files = BTreeMap::new();
    let mut checkpoints = BTreeMap::new();
    for rel in artifacts.files() {
        let hash = sha256_hex(&fs::read(artifacts.root().join(rel))?);
        let name = slash_path(rel);
        if rel.extension().is_some_and(|e| e == "bin") {
            checkpoints.insert(name.clone(), hash.clone());
        }
        files.insert(name, hash);
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: subcommand.to_string(),
        config_hash: config_hash(cfg),
        seed: cfg.seed,
        dataset_hash: dataset_hash.to_string(),
        checkpoints,
        files,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(artifacts.root().join(MANIFEST_FILE), text)?;
    Ok(manifest)
}
