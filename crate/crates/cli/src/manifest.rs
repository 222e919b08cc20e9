//! Run manifests and the output-directory lock.
//!
//! Each stage writes `manifests/<stage>.json` and stamps its artifacts with
//! the manifest hash: JSON objects get a `manifest_hash` field, CSV and JSONL
//! files a leading `# manifest_hash=<hex>` line.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub inputs: Vec<InputDigest>,
    pub manifest_hash: String,
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| difficulty_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    /// Inputs are identified by file name and content, never by location.
    pub fn new(stage: &str, seed: u64, config_hash: &str, inputs: &[&Path]) -> Result<Self, CliError> {
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(InputDigest {
                    name: p
                        .file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                    sha256: file_sha256(p)?,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let mut m = Self {
            stage: stage.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config_hash: config_hash.into(),
            inputs,
            manifest_hash: String::new(),
        };
        let body = serde_json::to_string(&m).expect("manifest serializes");
        m.manifest_hash = hex::encode(Sha256::digest(body.as_bytes()));
        Ok(m)
    }

    pub fn hash(&self) -> &str {
        &self.manifest_hash
    }
}

/// Serializes `value` with a `manifest_hash` field. Non-object values are
/// wrapped as `{ "<key>": value }` first.
pub fn stamp<T: Serialize>(value: &T, wrap_key: &str, manifest_hash: &str) -> Value {
    let v = serde_json::to_value(value).expect("artifact serializes");
    let mut obj = match v {
        Value::Object(map) => map,
        other => {
            let mut map = serde_json::Map::new();
            map.insert(wrap_key.into(), other);
            map
        }
    };
    obj.insert("manifest_hash".into(), Value::String(manifest_hash.into()));
    Value::Object(obj)
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(out_dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(out_dir).map_err(|e| difficulty_core::Error::Io {
            path: out_dir.to_path_buf(),
            source: e,
        })?;
        let path = out_dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked { path }),
            Err(e) => Err(difficulty_core::Error::Io { path, source: e }.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
