//! Per-directory run manifest: config hash, seed and SHA-256 of every
//! artifact below the directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use attnguide::util::write_atomic;

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    /// Relative path (with `/` separators) to hex SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

fn collect(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<(), CliError> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            collect(root, &path, out)?;
            continue;
        }
        let rel = path.strip_prefix(root).expect("below root");
        let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
        let rel = rel.join("/");
        if rel == MANIFEST_FILE || rel.ends_with(".tmp") {
            continue;
        }
        out.insert(rel, hex::encode(Sha256::digest(fs::read(&path)?)));
    }
    Ok(())
}

/// Hashes every file under `dir` (nested manifests included) and writes
/// `dir/manifest.json`.
pub fn write_manifest(dir: &Path, command: &str, config_hash: &str, seed: Option<u64>) -> Result<RunManifest, CliError> {
    let mut artifacts = BTreeMap::new();
    collect(dir, dir, &mut artifacts)?;
    let m = RunManifest { command: command.to_string(), config_hash: config_hash.to_string(), seed, artifacts };
    write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&m)?)?;
    Ok(m)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, CliError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Recomputes checksums; returns the artifacts that changed or vanished.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>, CliError> {
    let m = read_manifest(dir)?;
    let mut now = BTreeMap::new();
    collect(dir, dir, &mut now)?;
    Ok(m.artifacts.iter().filter(|(k, v)| now.get(*k) != Some(v)).map(|(k, _)| k.clone()).collect())
}
