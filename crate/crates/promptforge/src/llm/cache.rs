//! Content-addressed response cache.
//!
//! One file per request key under `<cache_dir>/<first-2-hex>/<key>.record`,
//! holding the key preimage, the completion, and a checksum. Writes go
//! through a temp file plus atomic rename so concurrent misses on the same
//! key leave exactly one well-formed record.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Completion, LlmError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    /// The digest preimage of the request this record answers.
    pub preimage: String,
    pub completion: Completion,
    pub checksum: String,
}

impl CacheRecord {
    pub fn new(preimage: String, completion: Completion) -> Self {
        let checksum = Self::compute_checksum(&preimage, &completion);
        Self {
            preimage,
            completion,
            checksum,
        }
    }

    fn compute_checksum(preimage: &str, completion: &Completion) -> String {
        let mut hasher = Sha256::new();
        hasher.update(preimage.as_bytes());
        hasher.update(serde_json::to_string(completion).expect("completion serializes"));
        hex::encode(hasher.finalize())
    }

    fn verify(&self, key: &str) -> bool {
        if self.checksum != Self::compute_checksum(&self.preimage, &self.completion) {
            return false;
        }
        let mut hasher = Sha256::new();
        hasher.update(self.preimage.as_bytes());
        hex::encode(hasher.finalize()) == key
    }
}

#[derive(Debug, Clone)]
pub struct CacheStore {
    dir: PathBuf,
}

impl CacheStore {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn record_path(&self, key: &str) -> PathBuf {
        let shard = &key[..2.min(key.len())];
        self.dir.join(shard).join(format!("{key}.record"))
    }

    /// `Ok(None)` if absent, `Err(CacheCorrupt)` if present but failing the
    /// integrity check.
    pub fn load(&self, key: &str) -> Result<Option<CacheRecord>, LlmError> {
        let path = self.record_path(key);
        let raw = match fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(err) if err.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(err) => return Err(err.into()),
        };
        let record: CacheRecord = match serde_json::from_str(&raw) {
            Ok(record) => record,
            Err(_) => return Err(LlmError::CacheCorrupt(key.to_string())),
        };
        if !record.verify(key) {
            return Err(LlmError::CacheCorrupt(key.to_string()));
        }
        Ok(Some(record))
    }

    pub fn store(&self, key: &str, record: &CacheRecord) -> std::io::Result<()> {
        let path = self.record_path(key);
        let parent = path.parent().expect("record path has parent");
        fs::create_dir_all(parent)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
        tmp.write_all(serde_json::to_string(record).expect("record serializes").as_bytes())?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }
}
