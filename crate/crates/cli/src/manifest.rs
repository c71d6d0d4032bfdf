//! `<out>/manifest.json`: what each command last wrote, with checksums.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

/// The tape backend runs on one thread with fixed reduction order, so
/// identical inputs give identical bits.
pub const DETERMINISM: &str = "deterministic: single-threaded f64 CPU backend, fixed reduction order";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub seed: u64,
    pub determinism: String,
    /// Path relative to the output root, then sha256.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Every regular file below `dir`, sorted.
pub fn files_in(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            out.extend(files_in(&path)?);
        } else {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Replaces the entry for `stage`, leaving the other stages as they were.
pub fn record(out: &Path, stage: &str, cfg: &RunConfig, artifacts: &[PathBuf]) -> anyhow::Result<()> {
    let path = out.join(MANIFEST_FILE);
    let mut manifest: RunManifest = if path.exists() {
        crate::config::read_json(&path)?
    } else {
        RunManifest::default()
    };
    let mut sums = BTreeMap::new();
    for a in artifacts {
        let rel = a.strip_prefix(out).unwrap_or(a);
        let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        sums.insert(key, sha256_file(a)?);
    }
    manifest.stages.insert(
        stage.to_string(),
        StageRecord {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            determinism: DETERMINISM.to_string(),
            artifacts: sums,
        },
    );
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}
