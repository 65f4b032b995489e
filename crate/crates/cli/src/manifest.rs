//! Output directory writing and the reproducibility manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::experiments::Artifact;

pub const MANIFEST_NAME: &str = "manifest.txt";

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Manifest text. `artifact_set_sha256` hashes the config digest, the seed
/// and every `(name, digest)` pair in name order, so it identifies the whole
/// run output.
pub fn manifest(config_raw: &[u8], seed: u64, experiment: &str, artifacts: &[Artifact]) -> String {
    let mut entries: Vec<(&str, String, usize)> = artifacts
        .iter()
        .map(|a| (a.name.as_str(), sha256_hex(&a.bytes), a.bytes.len()))
        .collect();
    entries.sort_unstable();
    let config_hash = sha256_hex(config_raw);

    let mut set = Sha256::new();
    set.update(config_hash.as_bytes());
    set.update(seed.to_le_bytes());
    for (name, hash, _) in &entries {
        set.update(name.as_bytes());
        set.update([0]);
        set.update(hash.as_bytes());
    }

    let mut out = String::new();
    let _ = writeln!(out, "config_sha256={config_hash}");
    let _ = writeln!(out, "seed={seed}");
    let _ = writeln!(out, "experiment={experiment}");
    let _ = writeln!(out, "artifact_set_sha256={}", hex::encode(set.finalize()));
    for (name, hash, len) in &entries {
        let _ = writeln!(out, "output={name} sha256={hash} bytes={len}");
    }
    out
}

#[derive(Debug, thiserror::Error)]
#[error("{}: {source}", path.display())]
pub struct WriteError {
    pub path: PathBuf,
    pub source: std::io::Error,
}

/// Writes every artifact, then the manifest last so that a present manifest
/// means a complete output set.
pub fn write_outputs(
    dir: &Path,
    artifacts: &[Artifact],
    manifest_text: &str,
) -> Result<(), WriteError> {
    let io = |path: PathBuf| move |source| WriteError { path, source };
    std::fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
    let stale = dir.join(MANIFEST_NAME);
    if stale.exists() {
        std::fs::remove_file(&stale).map_err(io(stale.clone()))?;
    }
    for a in artifacts {
        let path = dir.join(&a.name);
        std::fs::write(&path, &a.bytes).map_err(io(path.clone()))?;
    }
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, manifest_text).map_err(io(path.clone()))
}
