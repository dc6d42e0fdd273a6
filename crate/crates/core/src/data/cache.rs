//! Windowed-dataset cache: versioned JSON keyed by a hash of the data
//! files and the config fields that shape the windows.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::normalize::NormalizationStats;
use super::window::{WindowSample, WindowSpec};
use crate::cluster::ClusterModel;
use crate::error::{MafnError, Result};

pub const CACHE_FORMAT: &str = "mafn-windows";
pub const CACHE_VERSION: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCache {
    pub format: String,
    pub version: u32,
    pub key: String,
    pub clusters: ClusterModel,
    pub stats: NormalizationStats,
    pub train_units: Vec<u32>,
    pub validation_units: Vec<u32>,
    pub train: Vec<WindowSample>,
    pub validation: Vec<WindowSample>,
}

/// Cache key from the raw data digest, the window spec and any extra
/// config text that affects preprocessing.
pub fn cache_key(data_sha256: &str, spec: &WindowSpec, extra: &str) -> String {
    let mut h = Sha256::new();
    h.update(data_sha256.as_bytes());
    h.update(serde_json::to_vec(spec).expect("spec serializes"));
    h.update(extra.as_bytes());
    hex::encode(h.finalize())
}

pub fn cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("windows-{}.json", &key[..16.min(key.len())]))
}

impl WindowCache {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| MafnError::Data(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| MafnError::io(path, e))
    }

    /// Loads a cache file; `Ok(None)` when it is missing, stale or from
    /// another format version.
    pub fn load_if_fresh(path: &Path, key: &str) -> Result<Option<Self>> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(MafnError::io(path, e)),
        };
        let Ok(cache) = serde_json::from_str::<WindowCache>(&text) else {
            return Ok(None);
        };
        let fresh = cache.format == CACHE_FORMAT && cache.version == CACHE_VERSION && cache.key == key;
        Ok(fresh.then_some(cache))
    }
}
