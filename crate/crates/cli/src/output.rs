//! Artifact writer. Every file goes under the output directory and is
//! recorded with its SHA-256 in `manifest.json`; entries from earlier
//! commands sharing the directory are kept while their files still exist.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{env, CliResult};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    /// Relative path to lowercase hex SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

pub struct Output {
    root: PathBuf,
    written: BTreeMap<String, String>,
}

impl Output {
    pub fn new(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| env(format!("cannot create {}: {e}", root.display())))?;
        Ok(Output {
            root: root.to_path_buf(),
            written: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| env(format!("cannot create {}: {e}", dir.display())))?;
        }
        std::fs::write(&path, bytes).map_err(|e| env(format!("cannot write {}: {e}", path.display())))?;
        self.written.insert(rel.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(env)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Merges this run's artifacts into the manifest on disk.
    pub fn finish(self) -> CliResult<()> {
        let path = self.root.join(MANIFEST);
        let mut manifest: Manifest = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
            Err(_) => Manifest::default(),
        };
        manifest.artifacts.retain(|rel, _| self.root.join(rel).exists());
        manifest.artifacts.extend(self.written);
        let mut text = serde_json::to_string_pretty(&manifest).map_err(env)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| env(format!("cannot write {}: {e}", path.display())))
    }
}
