//! Run manifest written once into every output directory.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub subcommand: &'static str,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<String>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn digest(path: &Path) -> Result<InputDigest> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Collects outputs of one run and writes them plus the manifest.
pub struct OutputDir {
    dir: PathBuf,
    manifest: RunManifest,
}

impl OutputDir {
    pub fn create(
        dir: &Path,
        subcommand: &'static str,
        config: serde_json::Value,
        inputs: &[&Path],
    ) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let inputs = inputs.iter().map(|p| digest(p)).collect::<Result<_>>()?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                tool_version: env!("CARGO_PKG_VERSION"),
                subcommand,
                config,
                inputs,
                started_unix: now(),
                finished_unix: 0.0,
                outputs: Vec::new(),
            },
        })
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.outputs.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s)
    }

    pub fn finish(mut self) -> Result<()> {
        self.manifest.finished_unix = now();
        let path = self.dir.join(MANIFEST_FILE);
        let s = serde_json::to_string_pretty(&self.manifest)? + "\n";
        std::fs::write(&path, s).with_context(|| format!("writing {}", path.display()))
    }
}
