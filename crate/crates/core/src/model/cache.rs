//! Content-addressed response cache.
//!
//! Layout: `<root>/<model_id>/<first two hex of key>/<key>.json`. Entries are
//! written to a temporary file in the target directory and linked into place
//! without clobbering, so readers never see a partial entry and the first
//! writer of a key wins.

use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache entry {0} is corrupt")]
    CacheCorrupt(String),
    #[error("cache io at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid cache key {0:?}")]
    InvalidKey(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub response: String,
    pub response_sha256: String,
    pub created_at: u64,
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// SHA-256 over `model_id ‖ template_hash ‖ prompt`, fields separated by a
/// unit-separator byte.
pub fn cache_key(model_id: &str, template_hash: &str, prompt: &str) -> String {
    sha256_hex(&[
        model_id.as_bytes(),
        b"\x1f",
        template_hash.as_bytes(),
        b"\x1f",
        prompt.as_bytes(),
    ])
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

fn is_hex_key(key: &str) -> bool {
    key.len() == 64 && key.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

// model ids become directory names
fn safe_component(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, model_id: &str, key: &str) -> PathBuf {
        self.root
            .join(safe_component(model_id))
            .join(&key[..2])
            .join(format!("{key}.json"))
    }

    pub fn get(&self, model_id: &str, key: &str) -> Result<Option<String>, CacheError> {
        if !is_hex_key(key) {
            return Err(CacheError::InvalidKey(key.to_string()));
        }
        let path = self.entry_path(model_id, key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(CacheError::Io { path, source }),
        };
        let entry: CacheEntry =
            serde_json::from_slice(&bytes).map_err(|_| CacheError::CacheCorrupt(key.to_string()))?;
        if entry.key != key || entry.response_sha256 != sha256_hex(&[entry.response.as_bytes()]) {
            return Err(CacheError::CacheCorrupt(key.to_string()));
        }
        Ok(Some(entry.response))
    }

    /// Returns `Ok(())` also when another writer stored the key first.
    pub fn put(&self, model_id: &str, key: &str, response: &str) -> Result<(), CacheError> {
        if !is_hex_key(key) {
            return Err(CacheError::InvalidKey(key.to_string()));
        }
        let path = self.entry_path(model_id, key);
        let dir = path.parent().expect("entry path has a parent");
        let io = |source| CacheError::Io {
            path: path.clone(),
            source,
        };
        fs::create_dir_all(dir).map_err(io)?;
        let entry = CacheEntry {
            key: key.to_string(),
            response: response.to_string(),
            response_sha256: sha256_hex(&[response.as_bytes()]),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        serde_json::to_writer(&mut tmp, &entry).map_err(|e| io(e.into()))?;
        tmp.flush().map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        match tmp.persist_noclobber(&path) {
            Ok(_) => Ok(()),
            Err(e) if e.error.kind() == ErrorKind::AlreadyExists => Ok(()),
            Err(e) => Err(io(e.error)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn put_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let key = cache_key("m", "t", "prompt");
        assert_eq!(cache.get("m", &key).unwrap(), None);
        cache.put("m", &key, "héllo\nworld ").unwrap();
        assert_eq!(cache.get("m", &key).unwrap().as_deref(), Some("héllo\nworld "));
        let path = cache.entry_path("m", &key);
        assert!(path.starts_with(dir.path().join("m").join(&key[..2])));
    }

    #[test]
    fn key_depends_on_every_field() {
        let base = cache_key("m", "t", "p");
        assert_ne!(base, cache_key("m2", "t", "p"));
        assert_ne!(base, cache_key("m", "t2", "p"));
        assert_ne!(base, cache_key("m", "t", "p2"));
        assert_ne!(cache_key("ab", "c", "p"), cache_key("a", "bc", "p"));
    }

    #[test]
    fn tampered_entry_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let key = cache_key("m", "t", "p");
        cache.put("m", &key, "yes").unwrap();
        let path = cache.entry_path("m", &key);
        let text = fs::read_to_string(&path).unwrap().replace("\"yes\"", "\"no\"");
        fs::write(&path, text).unwrap();
        assert!(matches!(cache.get("m", &key), Err(CacheError::CacheCorrupt(_))));
        fs::write(&path, "{not json").unwrap();
        assert!(matches!(cache.get("m", &key), Err(CacheError::CacheCorrupt(_))));
    }

    #[test]
    fn rejects_non_hex_keys() {
        let cache = ResponseCache::new("/nonexistent");
        assert!(matches!(cache.get("m", "../x"), Err(CacheError::InvalidKey(_))));
    }

    #[test]
    fn concurrent_puts_of_one_key() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(ResponseCache::new(dir.path()));
        let key = cache_key("m", "t", "contended");
        let handles: Vec<_> = (0..100)
            .map(|i| {
                let cache = Arc::clone(&cache);
                let key = key.clone();
                std::thread::spawn(move || cache.put("m", &key, &format!("writer {i}")))
            })
            .collect();
        for h in handles {
            h.join().unwrap().unwrap();
        }
        let got = cache.get("m", &key).unwrap().unwrap();
        assert!(got.starts_with("writer "));
        // no stray temp files left behind
        let n = fs::read_dir(cache.entry_path("m", &key).parent().unwrap())
            .unwrap()
            .count();
        assert_eq!(n, 1);
    }
}
