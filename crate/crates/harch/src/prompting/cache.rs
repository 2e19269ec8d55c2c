//! Append-only transcript cache keyed by (model, template hash, item id).
//!
//! Every request/response attempt is recorded, so a completed benchmark run
//! can be re-scored or replayed bit-identically with zero network calls.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PromptError;

/// One request/response exchange for an instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attempt {
    /// Hash of the rendered message sequence that was sent.
    pub request_hash: String,
    pub response: String,
    pub parse_ok: bool,
    /// Why the attempt was rejected, when `parse_ok` is false.
    pub reason: Option<String>,
}

/// All attempts made for one (model, template, item) triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub model: String,
    pub template_hash: String,
    pub item_id: String,
    pub attempts: Vec<Attempt>,
}

/// Cache key: all three components hashed together so keys stay fixed-width
/// and filesystem-safe regardless of item id contents.
pub fn cache_key(model: &str, template_hash: &str, item_id: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model.as_bytes());
    hasher.update([0]);
    hasher.update(template_hash.as_bytes());
    hasher.update([0]);
    hasher.update(item_id.as_bytes());
    crate::model::hex_string(&hasher.finalize())
}

/// JSONL-backed transcript store. Records are loaded eagerly on open;
/// inserts append to the file immediately. A later record for the same key
/// supersedes an earlier one.
#[derive(Debug)]
pub struct TranscriptCache {
    path: PathBuf,
    records: HashMap<String, CacheRecord>,
}

impl TranscriptCache {
    pub fn open(path: &Path) -> Result<TranscriptCache, PromptError> {
        let mut records = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path)?;
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord = serde_json::from_str(line).map_err(|e| {
                    PromptError::Cache(format!("{}:{}: {e}", path.display(), lineno + 1))
                })?;
                records.insert(record.key.clone(), record);
            }
        }
        Ok(TranscriptCache {
            path: path.to_path_buf(),
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&CacheRecord> {
        self.records.get(key)
    }

    pub fn insert(&mut self, record: CacheRecord) -> Result<(), PromptError> {
        let line =
            serde_json::to_string(&record).map_err(|e| PromptError::Cache(e.to_string()))?;
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        writeln!(file, "{line}")?;
        self.records.insert(record.key.clone(), record);
        Ok(())
    }
}
