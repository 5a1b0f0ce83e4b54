use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use super::CachedResponse;
use crate::error::{Error, Result};
use crate::jsonl::write_atomic;

/// Digest-keyed response store. Entries are write-once; the on-disk layout
/// is `<dir>/<first two hex chars>/<digest>.json`.
pub struct ResponseCache {
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, CachedResponse>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            dir: None,
            memory: RwLock::new(HashMap::new()),
        }
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(ResponseCache {
            dir: Some(dir),
            memory: RwLock::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn entry_path(&self, key: &str) -> Option<PathBuf> {
        let prefix = key.get(..2).unwrap_or("00");
        self.dir.as_ref().map(|d| d.join(prefix).join(format!("{key}.json")))
    }

    pub fn get(&self, key: &str) -> Result<Option<CachedResponse>> {
        if let Some(hit) = self.memory.read().unwrap().get(key) {
            return Ok(Some(hit.clone()));
        }
        let Some(path) = self.entry_path(key) else {
            return Ok(None);
        };
        match std::fs::read(&path) {
            Ok(bytes) => {
                let resp: CachedResponse = serde_json::from_slice(&bytes)?;
                self.memory.write().unwrap().insert(key.to_string(), resp.clone());
                Ok(Some(resp))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn put(&self, key: &str, resp: &CachedResponse) -> Result<()> {
        if let Some(path) = self.entry_path(key) {
            if !path.exists() {
                write_atomic(&path, &serde_json::to_vec(resp)?)?;
            }
        }
        self.memory
            .write()
            .unwrap()
            .entry(key.to_string())
            .or_insert_with(|| resp.clone());
        Ok(())
    }
}
