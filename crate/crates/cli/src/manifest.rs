use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Record of one command that wrote outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    /// Resolved configuration text, when the command uses one.
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub workers: usize,
    /// SHA-256 of every input knowledge-base file, by path.
    pub kb_digests: BTreeMap<String, String>,
    pub started: String,
    pub finished: String,
    pub artifacts: Vec<String>,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(workers: usize) -> Self {
        Self {
            command: std::env::args().collect(),
            config: None,
            seed: None,
            workers,
            kb_digests: BTreeMap::new(),
            started: now(),
            finished: String::new(),
            artifacts: Vec::new(),
        }
    }

    /// Digests the knowledge-base files present in `dir`.
    pub fn digest_kb_dir(&mut self, dir: &Path) -> Result<()> {
        for name in ["meta.tsv", "facts.tsv", "train.tsv", "valid.tsv", "test.tsv"] {
            let p = dir.join(name);
            if p.exists() {
                self.digest_file(&p)?;
            }
        }
        Ok(())
    }

    pub fn digest_file(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.kb_digests
            .insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    pub fn artifact(&mut self, path: &Path) {
        self.artifacts.push(path.display().to_string());
    }

    /// Stamps the end time and writes the manifest as JSON to `path`.
    pub fn finish(mut self, path: &Path) -> Result<PathBuf> {
        self.finished = now();
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path.to_path_buf())
    }
}

/// Manifest path for a single-file output: `<file>.manifest.json`.
pub fn beside(file: &Path) -> PathBuf {
    let mut name = file.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    file.with_file_name(name)
}
