//! One `manifest.json` per output directory.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::Result;
use crate::files;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct DatasetHash {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun a command. The timestamp is the only field
/// that differs between identical runs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub datasets: Vec<DatasetHash>,
    pub outputs: Vec<String>,
    pub version: String,
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        RunManifest {
            command: command.into(),
            config,
            seeds,
            datasets: Vec::new(),
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").into(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn add_dataset(&mut self, path: &Path) -> Result<()> {
        let sha256 = files::hash_file(path)?;
        self.datasets.push(DatasetHash { path: path.display().to_string(), sha256 });
        Ok(())
    }

    pub fn add_outputs(&mut self, paths: &[PathBuf]) {
        self.outputs.extend(paths.iter().map(|p| p.display().to_string()));
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join(MANIFEST_NAME);
        files::write_json(self, &p)?;
        Ok(p)
    }
}
