//! Content-addressed rationale cache on disk.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub model: String,
    pub rationale: String,
}

/// Hex sha256 of `model`, a NUL byte and `prompt`.
pub fn cache_key(model: &str, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(model.as_bytes());
    h.update([0u8]);
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

/// One JSON file per key under `<dir>/<first two hex chars>/<key>.json`.
/// Writes go through a temporary file and a rename.
#[derive(Debug)]
pub struct RationaleCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl RationaleCache {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(RationaleCache {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    /// Unreadable or mismatched entries count as misses.
    pub fn get(&self, key: &str) -> Option<CacheRecord> {
        let bytes = fs::read(self.path_for(key)).ok()?;
        let rec: CacheRecord = serde_json::from_slice(&bytes).ok()?;
        (rec.key == key).then_some(rec)
    }

    pub fn put(&self, rec: &CacheRecord) -> std::io::Result<()> {
        let path = self.path_for(&rec.key);
        let parent = path.parent().expect("cache path has a parent");
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        fs::create_dir_all(parent)?;
        let tmp = parent.join(format!(".{}.tmp", rec.key));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&serde_json::to_vec(rec).expect("record serializes"))?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)
    }
}
