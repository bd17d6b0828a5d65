//! Writing run outputs to disk.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use tightwave_core::Result;

use crate::config::RunConfig;
use crate::run::{RunOutput, Status};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub status: String,
    pub exit_code: i32,
    pub seed: Option<u64>,
    pub wall_time_seconds: f64,
    /// SHA-256 of the canonical JSON form of `config`, leaving out the
    /// output directory so reruns elsewhere share a hash.
    pub input_hash: String,
    pub config: Value,
    pub files: Vec<FileEntry>,
    pub metrics: Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Write `contents` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, &target)?;
    Ok(target)
}

pub fn build_manifest(cfg: &RunConfig, out: &RunOutput, wall_time: f64) -> Result<Manifest> {
    let config = serde_json::to_value(cfg)?;
    let mut hashed = config.clone();
    if let Some(outputs) = hashed.get_mut("outputs").and_then(Value::as_object_mut) {
        outputs.remove("directory");
    }
    let canonical = serde_json::to_vec(&hashed)?;
    Ok(Manifest {
        tool: "tightwave".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: cfg.command.name().to_string(),
        status: match out.status {
            Status::Success => "success",
            Status::ValidationFailure => "validation_failure",
        }
        .to_string(),
        exit_code: out.status.exit_code(),
        seed: cfg.mc.as_ref().map(|m| m.master_seed),
        wall_time_seconds: wall_time,
        input_hash: sha256_hex(&canonical),
        config,
        files: out
            .tables
            .iter()
            .map(|(name, b)| FileEntry { name: name.clone(), sha256: sha256_hex(b), bytes: b.len() as u64 })
            .collect(),
        metrics: out.metrics.clone(),
    })
}

/// Write every table, then the manifest. A failure part-way leaves no
/// manifest behind.
pub fn write_artifact(cfg: &RunConfig, out: &RunOutput, wall_time: f64) -> Result<Manifest> {
    let dir = &cfg.outputs.directory;
    fs::create_dir_all(dir)?;
    // A manifest from an earlier run must not vouch for this one's tables.
    match fs::remove_file(dir.join(MANIFEST)) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e.into()),
        _ => {}
    }
    for (name, bytes) in &out.tables {
        write_atomic(dir, name, bytes)?;
    }
    let manifest = build_manifest(cfg, out, wall_time)?;
    let mut text = serde_json::to_vec_pretty(&manifest)?;
    text.push(b'\n');
    write_atomic(dir, MANIFEST, &text)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
