//! Run manifests written beside every output.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<InputFile>,
    /// Semantic settings only: anything that can change an output.
    pub config: Value,
    pub config_digest: String,
    pub seed: Option<u64>,
    pub versions: Value,
    pub outputs: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Digest of the canonical JSON form of `config`. serde_json maps keep
/// keys sorted, so equal configs serialize identically.
pub fn config_digest(config: &Value) -> String {
    sha256_hex(config.to_string().as_bytes())
}

/// `<file>.run.json` beside an output file.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".run.json");
    out.with_file_name(name)
}

pub struct Recorder {
    command: String,
    inputs: Vec<InputFile>,
    config: Value,
    seed: Option<u64>,
}

impl Recorder {
    pub fn new(command: &str, config: Value) -> Self {
        Recorder {
            command: command.to_string(),
            inputs: Vec::new(),
            config,
            seed: None,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        if path.is_dir() {
            return self.input_dir(path);
        }
        self.inputs.push(InputFile {
            path: path.display().to_string(),
            sha256: hash_file(path)?,
        });
        Ok(())
    }

    /// Hashes a directory as the sorted list of its files' relative paths
    /// and digests.
    fn input_dir(&mut self, dir: &Path) -> Result<()> {
        let mut entries = Vec::new();
        collect_files(dir, dir, &mut entries)?;
        entries.sort();
        let listing: String = entries.iter().map(|(p, h)| format!("{p} {h}\n")).collect();
        self.inputs.push(InputFile {
            path: dir.display().to_string(),
            sha256: sha256_hex(listing.as_bytes()),
        });
        Ok(())
    }

    /// Writes `<out>.run.json` for the primary output `out`.
    pub fn write(self, out: &Path, outputs: &[&Path]) -> Result<()> {
        let manifest = RunManifest {
            config_digest: config_digest(&self.config),
            command: self.command,
            inputs: self.inputs,
            config: self.config,
            seed: self.seed,
            versions: serde_json::json!({ "conceptgen": env!("CARGO_PKG_VERSION") }),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        };
        let path = manifest_path(out);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<(String, String)>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).unwrap_or(&path).display().to_string();
            out.push((rel, hash_file(&path)?));
        }
    }
    Ok(())
}
