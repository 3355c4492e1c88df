use std::fmt;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::runs::write_atomic;
use crate::error::{Error, Result};

/// Lowercase hex SHA-256 of a provider call.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// `sha256(len(provider)‖provider‖len(op)‖op‖inputs)` with lengths as
/// little-endian u64, so no two distinct triples share an encoding.
pub fn cache_key(provider_id: &str, op_name: &str, inputs: &[u8]) -> CacheKey {
    let mut h = Sha256::new();
    h.update((provider_id.len() as u64).to_le_bytes());
    h.update(provider_id.as_bytes());
    h.update((op_name.len() as u64).to_le_bytes());
    h.update(op_name.as_bytes());
    h.update(inputs);
    CacheKey(hex::encode(h.finalize()))
}

/// Canonical JSON: object keys sorted, shortest round-trip float formatting.
pub fn canonical_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    // serde_json::Value keeps object keys in a BTreeMap.
    let value = serde_json::to_value(value)?;
    Ok(serde_json::to_vec(&value)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub provider_id: String,
    pub op: String,
    pub created_at: String,
    pub media_type: String,
}

/// On-disk cache: `<root>/<first two hex digits>/<digest>` holds the
/// payload and `<digest>.json` its [`Sidecar`]. Entries are never rewritten.
#[derive(Clone, Debug)]
pub struct Cache {
    root: PathBuf,
}

impl Cache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Cache { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn payload_path(&self, key: &CacheKey) -> PathBuf {
        self.root.join(&key.0[..2]).join(&key.0)
    }

    fn sidecar_path(&self, key: &CacheKey) -> PathBuf {
        self.root.join(&key.0[..2]).join(format!("{}.json", key.0))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<Vec<u8>>> {
        let path = self.payload_path(key);
        match std::fs::read(&path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn sidecar(&self, key: &CacheKey) -> Result<Option<Sidecar>> {
        let path = self.sidecar_path(key);
        match std::fs::read(&path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Writes sidecar then payload, each via temp file and rename, so a
    /// reader sees either no entry or a complete one.
    pub fn put(&self, key: &CacheKey, payload: &[u8], sidecar: &Sidecar) -> Result<()> {
        let path = self.payload_path(key);
        if path.exists() {
            return Ok(());
        }
        let dir = path.parent().expect("payload path has a parent");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&self.sidecar_path(key), |f| {
            serde_json::to_writer(&mut *f, sidecar)?;
            f.flush().map_err(|e| Error::io(dir, e))
        })?;
        write_atomic(&path, |f| {
            f.write_all(payload).map_err(|e| Error::io(dir, e))
        })
    }
}
