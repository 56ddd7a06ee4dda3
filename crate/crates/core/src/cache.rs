//! Content-addressed on-disk response cache.
//!
//! Each entry lives in its own JSON file at `<root>/<key[..2]>/<key>.json`.
//! Writes go to a temporary file in the same directory and are renamed into
//! place, so readers never observe a partially written entry.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub model_id: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub raw_output: String,
}

impl CacheEntry {
    pub fn new(key: impl Into<String>, model_id: impl Into<String>, raw_output: impl Into<String>) -> Self {
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        CacheEntry {
            key: key.into(),
            model_id: model_id.into(),
            created_at,
            raw_output: raw_output.into(),
        }
    }
}

#[derive(Debug)]
pub struct ResponseCache {
    root: PathBuf,
    write_lock: Mutex<()>,
    tmp_counter: AtomicU64,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl ResponseCache {
    pub fn open(root: impl AsRef<Path>) -> io::Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        Ok(ResponseCache {
            root,
            write_lock: Mutex::new(()),
            tmp_counter: AtomicU64::new(0),
            key_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        let shard = key.get(..2).unwrap_or("__");
        self.root.join(shard).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> io::Result<Option<CacheEntry>> {
        let path = self.entry_path(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        let entry: CacheEntry =
            serde_json::from_slice(&bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        if entry.key != key {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("cache entry {} holds key {}", path.display(), entry.key),
            ));
        }
        Ok(Some(entry))
    }

    pub fn put(&self, entry: &CacheEntry) -> io::Result<()> {
        let path = self.entry_path(&entry.key);
        let dir = path.parent().expect("entry path has a shard directory");
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        fs::create_dir_all(dir)?;
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = dir.join(format!(".{}.{}.{}.tmp", entry.key, std::process::id(), n));
        fs::write(&tmp, serde_json::to_vec_pretty(entry)?)?;
        fs::rename(&tmp, &path)
    }

    /// Runs `f` while holding an in-process lock for `key`, so concurrent
    /// lookups of one key resolve to a single backend call.
    pub fn with_key_lock<R>(&self, key: &str, f: impl FnOnce() -> R) -> R {
        let lock = {
            let mut locks = self.key_locks.lock().unwrap_or_else(|p| p.into_inner());
            Arc::clone(locks.entry(key.to_string()).or_default())
        };
        let _held = lock.lock().unwrap_or_else(|p| p.into_inner());
        f()
    }

    /// Number of stored entries.
    pub fn len(&self) -> io::Result<usize> {
        let mut n = 0;
        for shard in fs::read_dir(&self.root)? {
            let shard = shard?;
            if !shard.file_type()?.is_dir() {
                continue;
            }
            for f in fs::read_dir(shard.path())? {
                if f?.path().extension().is_some_and(|e| e == "json") {
                    n += 1;
                }
            }
        }
        Ok(n)
    }

    pub fn is_empty(&self) -> io::Result<bool> {
        Ok(self.len()? == 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(cache.get("abcdef").unwrap(), None);
        let e = CacheEntry::new("abcdef", "m", "Clear Reply");
        cache.put(&e).unwrap();
        assert_eq!(cache.get("abcdef").unwrap(), Some(e));
        assert_eq!(cache.len().unwrap(), 1);
        assert!(dir.path().join("ab").join("abcdef.json").exists());
    }

    #[test]
    fn overwrite_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        cache.put(&CacheEntry::new("k1", "m", "a")).unwrap();
        cache.put(&CacheEntry::new("k1", "m", "b")).unwrap();
        assert_eq!(cache.get("k1").unwrap().unwrap().raw_output, "b");
        let names: Vec<_> = fs::read_dir(dir.path().join("k1"))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn concurrent_writers() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        std::thread::scope(|s| {
            for t in 0..8 {
                let cache = &cache;
                s.spawn(move || {
                    for i in 0..20 {
                        cache.put(&CacheEntry::new(format!("k{t}x{i}"), "m", "v")).unwrap();
                        cache.get(&format!("k{t}x{i}")).unwrap().unwrap();
                    }
                });
            }
        });
        assert_eq!(cache.len().unwrap(), 160);
    }

    #[test]
    fn corrupt_entry_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        fs::create_dir_all(dir.path().join("zz")).unwrap();
        fs::write(dir.path().join("zz").join("zzz.json"), "{").unwrap();
        assert!(cache.get("zzz").is_err());
    }
}
