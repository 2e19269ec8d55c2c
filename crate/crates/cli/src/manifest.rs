//! Per-run output manifest: one JSON line per produced artifact with its
//! path (relative to the output directory), kind and content hash.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub kind: String,
    pub sha256: String,
}

pub struct Manifest {
    out_dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(out_dir: &Path) -> Result<Manifest, CliError> {
        std::fs::create_dir_all(out_dir)?;
        Ok(Manifest {
            out_dir: out_dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Writes `content` to `name` under the output directory and records it.
    pub fn write(&mut self, name: &str, kind: &str, content: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.out_dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, content)?;
        self.record(name, kind)?;
        Ok(path)
    }

    /// Records an artifact that was written directly (e.g. a checkpoint).
    pub fn record(&mut self, name: &str, kind: &str) -> Result<(), CliError> {
        let path = self.out_dir.join(name);
        let bytes = std::fs::read(&path)?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let sha256 = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        self.entries.push(ManifestEntry {
            path: name.to_string(),
            kind: kind.to_string(),
            sha256,
        });
        Ok(())
    }

    /// Writes manifest.jsonl; call once, after all artifacts are recorded.
    pub fn finish(self) -> Result<(), CliError> {
        let mut file = std::io::BufWriter::new(
            std::fs::File::create(self.out_dir.join("manifest.jsonl"))?,
        );
        for entry in &self.entries {
            writeln!(file, "{}", serde_json::to_string(entry)?)?;
        }
        Ok(())
    }
}
