use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use activity_disagg::pipeline::write_atomic;
use anyhow::{Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written next to every output set.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config_sha256: Option<String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn hash_all<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<BTreeMap<String, String>> {
    paths.into_iter().map(|p| Ok((p.display().to_string(), sha256_file(p)?))).collect()
}

fn stamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub struct ManifestBuilder {
    command: String,
    args: Vec<String>,
    seed: Option<u64>,
    config: Option<PathBuf>,
    started: DateTime<Utc>,
}

impl ManifestBuilder {
    pub fn start(command: &str, seed: Option<u64>, config: Option<&Path>) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            seed,
            config: config.map(Path::to_path_buf),
            started: Utc::now(),
        }
    }

    /// Hashes inputs and outputs and writes `manifest.json` into `out_dir`.
    pub fn finish(self, out_dir: &Path, inputs: &[&Path], outputs: &[PathBuf]) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            args: self.args,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config_sha256: self.config.as_deref().map(sha256_file).transpose()?,
            inputs: hash_all(inputs.iter().copied())?,
            outputs: hash_all(outputs.iter().map(PathBuf::as_path))?,
            started_at: stamp(self.started),
            finished_at: stamp(Utc::now()),
        };
        let path = out_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
