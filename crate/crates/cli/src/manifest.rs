use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nutricluster_core::{Error, Result};
use serde::Serialize;

use crate::inputs::sha256_hex;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub flags: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub version: String,
    pub seed: Option<u64>,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` wins when set.
    pub timestamp: u64,
}

fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
}

/// Collects output files and writes them together with a manifest.
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn new() -> Self {
        Self { files: Vec::new() }
    }

    pub fn add(&mut self, path: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.push((path.into(), bytes.into()));
    }

    pub fn add_json<T: Serialize>(&mut self, path: impl Into<PathBuf>, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.add(path, text);
        Ok(())
    }

    /// Writes every file, then the manifest at `manifest_path`.
    pub fn finish(
        self,
        manifest_path: &Path,
        subcommand: &str,
        flags: serde_json::Value,
        inputs: BTreeMap<String, String>,
        seed: Option<u64>,
    ) -> Result<()> {
        let mut outputs = BTreeMap::new();
        for (path, bytes) in &self.files {
            write(path, bytes)?;
            outputs.insert(path.display().to_string(), sha256_hex(bytes));
        }
        let manifest = RunManifest {
            subcommand: subcommand.to_string(),
            flags,
            inputs,
            outputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            timestamp: timestamp(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write(manifest_path, text.as_bytes())
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// `<out>.manifest.json` next to a single-file output.
pub fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}
