//! Append-only directory of responses, one JSON file per cache key at
//! `<dir>/<first two hex digits>/<key>.json`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use normalign_core::prompting::PromptVariant;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache entry {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("cache entry {path} is not a valid record: {message}")]
    Corrupt { path: String, message: String },
    #[error("invalid cache key {0:?}")]
    BadKey(String),
}

/// What is stored for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub cache_key: String,
    pub rot_id: String,
    pub model_id: String,
    pub variant: PromptVariant,
    pub prompt: String,
    pub request: serde_json::Value,
    pub text: String,
    pub retrieved_at: String,
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    writer: Mutex<()>,
}

fn valid_key(key: &str) -> bool {
    key.len() >= 3 && key.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> ResponseCache {
        ResponseCache {
            dir: dir.into(),
            writer: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> Result<PathBuf, CacheError> {
        if !valid_key(key) {
            return Err(CacheError::BadKey(key.to_owned()));
        }
        Ok(self.dir.join(&key[..2]).join(format!("{key}.json")))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.path_for(key).is_ok_and(|p| p.is_file())
    }

    pub fn get(&self, key: &str) -> Result<Option<CacheRecord>, CacheError> {
        let path = self.path_for(key)?;
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(source) => {
                return Err(CacheError::Io {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        let record: CacheRecord = serde_json::from_slice(&bytes).map_err(|e| CacheError::Corrupt {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if record.cache_key != key {
            return Err(CacheError::Corrupt {
                path: path.display().to_string(),
                message: format!("holds key {}", record.cache_key),
            });
        }
        Ok(Some(record))
    }

    /// Stores `record` unless its key is already present; existing entries
    /// are never rewritten. Returns whether a file was written.
    pub fn put(&self, record: &CacheRecord) -> Result<bool, CacheError> {
        let path = self.path_for(&record.cache_key)?;
        let io_err = |source| CacheError::Io {
            path: path.display().to_string(),
            source,
        };
        let _guard = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        if path.exists() {
            return Ok(false);
        }
        let parent = path.parent().expect("key directory");
        fs::create_dir_all(parent).map_err(io_err)?;
        let tmp = parent.join(format!(".{}.tmp", record.cache_key));
        let mut body = serde_json::to_vec_pretty(record).expect("record serializes");
        body.push(b'\n');
        let mut file = fs::File::create(&tmp).map_err(io_err)?;
        file.write_all(&body).map_err(io_err)?;
        file.sync_all().map_err(io_err)?;
        fs::rename(&tmp, &path).map_err(io_err)?;
        Ok(true)
    }

    /// All keys present, sorted.
    pub fn keys(&self) -> Result<Vec<String>, CacheError> {
        let mut keys = Vec::new();
        let io_err = |path: &Path, source| CacheError::Io {
            path: path.display().to_string(),
            source,
        };
        let top = match fs::read_dir(&self.dir) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(keys),
            Err(e) => return Err(io_err(&self.dir, e)),
        };
        for shard in top {
            let shard = shard.map_err(|e| io_err(&self.dir, e))?.path();
            if !shard.is_dir() {
                continue;
            }
            for entry in fs::read_dir(&shard).map_err(|e| io_err(&shard, e))? {
                let path = entry.map_err(|e| io_err(&shard, e))?.path();
                if path.extension().is_some_and(|e| e == "json") {
                    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                        if valid_key(stem) {
                            keys.push(stem.to_owned());
                        }
                    }
                }
            }
        }
        keys.sort();
        Ok(keys)
    }

    /// SHA-256 over the named entries' keys and file bytes, in key order.
    /// Missing entries contribute only their key.
    pub fn digest_of<'a, I>(&self, keys: I) -> Result<String, CacheError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut keys: Vec<&str> = keys.into_iter().collect();
        keys.sort_unstable();
        keys.dedup();
        let mut hasher = Sha256::new();
        for key in keys {
            let path = self.path_for(key)?;
            hasher.update(key.as_bytes());
            hasher.update([0]);
            match fs::read(&path) {
                Ok(bytes) => hasher.update(&bytes),
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(source) => {
                    return Err(CacheError::Io {
                        path: path.display().to_string(),
                        source,
                    })
                }
            }
            hasher.update([0]);
        }
        Ok(hex::encode(hasher.finalize()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(key: &str, text: &str) -> CacheRecord {
        CacheRecord {
            cache_key: key.into(),
            rot_id: "r1".into(),
            model_id: "m".into(),
            variant: PromptVariant::ZeroShot,
            prompt: "p".into(),
            request: serde_json::json!({}),
            text: text.into(),
            retrieved_at: "2024-08-11T00:00:00Z".into(),
        }
    }

    #[test]
    fn entries_are_sharded_and_never_overwritten() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path());
        let key = "ab".repeat(32);
        assert!(cache.get(&key).unwrap().is_none());
        assert!(cache.put(&record(&key, "first")).unwrap());
        assert!(!cache.put(&record(&key, "second")).unwrap());
        assert_eq!(cache.get(&key).unwrap().unwrap().text, "first");
        assert!(dir.path().join("ab").join(format!("{key}.json")).is_file());
        assert_eq!(cache.keys().unwrap(), vec![key.clone()]);
    }

    #[test]
    fn keys_are_validated() {
        let cache = ResponseCache::open("/nonexistent");
        assert!(matches!(cache.get("../etc"), Err(CacheError::BadKey(_))));
        assert!(cache.keys().unwrap().is_empty());
    }

    #[test]
    fn digest_depends_on_content() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let key = "cd".repeat(32);
        ResponseCache::open(a.path()).put(&record(&key, "x")).unwrap();
        ResponseCache::open(b.path()).put(&record(&key, "y")).unwrap();
        let da = ResponseCache::open(a.path()).digest_of([key.as_str()]).unwrap();
        let db = ResponseCache::open(b.path()).digest_of([key.as_str()]).unwrap();
        assert_ne!(da, db);
        assert_eq!(da, ResponseCache::open(a.path()).digest_of([key.as_str()]).unwrap());
    }
}
