use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::Operation;
use crate::records::{digest_json, write_atomic, RecordError};

#[derive(Serialize)]
struct CacheKey<'a, I: Serialize> {
    backend: &'a str,
    op: &'a str,
    inputs: &'a I,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evicted: u64,
}

/// Content-addressed response store: one JSON file per key digest under
/// `<dir>/<first two hex chars>/<digest>.json`.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
    evicted: AtomicU64,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, RecordError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| RecordError::io(&dir, e))?;
        Ok(ResponseCache {
            dir,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            evicted: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key<I: Serialize>(backend_id: &str, op: Operation, inputs: &I) -> String {
        digest_json(&CacheKey {
            backend: backend_id,
            op: op.as_str(),
            inputs,
        })
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    /// Looks up a stored result. A corrupt entry is evicted and reported as a miss.
    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Option<T> {
        let path = self.entry_path(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(_) => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                return None;
            }
        };
        match serde_json::from_slice(&bytes) {
            Ok(v) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Some(v)
            }
            Err(err) => {
                tracing::warn!(entry = %path.display(), %err, "evicting corrupt cache entry");
                let _ = fs::remove_file(&path);
                self.evicted.fetch_add(1, Ordering::Relaxed);
                self.misses.fetch_add(1, Ordering::Relaxed);
                None
            }
        }
    }

    pub fn put<T: Serialize>(&self, key: &str, value: &T) -> Result<(), RecordError> {
        let bytes = serde_json::to_vec(value).expect("cache values serialize");
        write_atomic(&self.entry_path(key), &bytes)
    }

    pub fn clear(&self) -> Result<(), RecordError> {
        if self.dir.exists() {
            fs::remove_dir_all(&self.dir).map_err(|e| RecordError::io(&self.dir, e))?;
        }
        fs::create_dir_all(&self.dir).map_err(|e| RecordError::io(&self.dir, e))
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            evicted: self.evicted.load(Ordering::Relaxed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupt_entry_is_evicted() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let key = ResponseCache::key("b", Operation::Generate, &"x");
        cache.put(&key, &vec![1.5f64, -2.0]).unwrap();
        assert_eq!(cache.get::<Vec<f64>>(&key), Some(vec![1.5, -2.0]));

        fs::write(cache.entry_path(&key), b"{not json").unwrap();
        assert_eq!(cache.get::<Vec<f64>>(&key), None);
        assert!(!cache.entry_path(&key).exists());
        assert_eq!(cache.stats().evicted, 1);
    }

    #[test]
    fn key_separates_backend_and_op() {
        let a = ResponseCache::key("a", Operation::Generate, &"x");
        let b = ResponseCache::key("b", Operation::Generate, &"x");
        let c = ResponseCache::key("a", Operation::ScoreTarget, &"x");
        assert_ne!(a, b);
        assert_ne!(a, c);
    }
}
