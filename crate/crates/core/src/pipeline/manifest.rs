use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    /// Path -> sha256 of every declared input.
    pub inputs: BTreeMap<String, String>,
    /// Run-relative path -> sha256 of every output written.
    pub outputs: BTreeMap<String, String>,
    pub started_at: u64,
    pub finished_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_digest: String,
    pub created_at: u64,
    pub stages: BTreeMap<String, StageRecord>,
}

/// Seconds since the Unix epoch.
pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(config_digest: &str) -> Self {
        RunManifest {
            run_id: config_digest[..12.min(config_digest.len())].to_string(),
            config_digest: config_digest.to_string(),
            created_at: now(),
            stages: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Option<Self>> {
        match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| Error::Pipeline(format!("corrupt manifest {}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn status(&self, stage: &str) -> StageStatus {
        self.stages.get(stage).map_or(StageStatus::Pending, |s| s.status)
    }

    /// The manifest with all timestamps zeroed, for comparing runs.
    pub fn without_timestamps(&self) -> RunManifest {
        let mut m = self.clone();
        m.created_at = 0;
        for s in m.stages.values_mut() {
            s.started_at = 0;
            s.finished_at = s.finished_at.map(|_| 0);
        }
        m
    }
}
