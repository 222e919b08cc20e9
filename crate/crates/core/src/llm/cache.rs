//! Content-addressed on-disk cache of simulation responses.
//!
//! One JSON file per key. Writes go through a temp file and an atomic rename,
//! so concurrent readers never observe a partial entry.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RawOptionMap;
use crate::error::{Error, Result};
use crate::jsonl::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub probs: RawOptionMap,
    /// Raw provider replies in order (initial reply, then any reprompt reply).
    pub exchanges: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SimulationCache {
    dir: PathBuf,
}

pub fn cache_key(provider: &str, model: &str, persona_hash: &str, question_hash: &str, prompt_hash: &str) -> String {
    let mut h = Sha256::new();
    for part in [provider, model, persona_hash, question_hash, prompt_hash] {
        h.update(part.as_bytes());
        h.update([0x1f]);
    }
    hex::encode(h.finalize())
}

impl SimulationCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        let text = fs::read_to_string(self.path(key)).ok()?;
        match serde_json::from_str(&text) {
            Ok(e) => Some(e),
            Err(err) => {
                tracing::warn!(key, %err, "ignoring unreadable cache entry");
                None
            }
        }
    }

    pub fn put(&self, key: &str, entry: &CacheEntry) -> Result<()> {
        write_atomic(&self.path(key), serde_json::to_string(entry)?.as_bytes())
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|d| {
                d.filter_map(|e| e.ok())
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
