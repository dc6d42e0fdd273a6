//! Single-file checkpoint: config, dimensions, clusters, normalization and
//! parameters.
//!
//! Layout: `MAFNCKPT`, format version (u32 LE), header length (u64 LE), a
//! JSON header, then the parameter block. No timestamps, so equal inputs
//! give equal bytes.

use std::io::{Read, Write};
use std::path::Path;

use mafn_tensor::ParamStore;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterModel;
use crate::config::TrainConfig;
use crate::data::NormalizationStats;
use crate::error::{MafnError, Result};
use crate::model::MafnDims;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MAFNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub dims: MafnDims,
    pub clusters: ClusterModel,
    pub stats: NormalizationStats,
    pub params: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    dims: MafnDims,
    clusters: ClusterModel,
    stats: NormalizationStats,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            dims: self.dims.clone(),
            clusters: self.clusters.clone(),
            stats: self.stats.clone(),
        })
        .map_err(|e| MafnError::Contract(format!("checkpoint header: {e}")))?;
        let mut out = Vec::with_capacity(header.len() + 64);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        self.params.write_to(&mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(MafnError::Data("not a checkpoint file (bad magic)".into()));
        }
        let mut v = [0u8; 4];
        read_exact(&mut r, &mut v)?;
        let version = u32::from_le_bytes(v);
        if version != CHECKPOINT_VERSION {
            return Err(MafnError::Data(format!(
                "checkpoint format version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let mut n = [0u8; 8];
        read_exact(&mut r, &mut n)?;
        let n = u64::from_le_bytes(n) as usize;
        if n > r.len() {
            return Err(MafnError::Data("checkpoint truncated in header".into()));
        }
        let header: Header =
            serde_json::from_slice(&r[..n]).map_err(|e| MafnError::Data(format!("checkpoint header: {e}")))?;
        r = &r[n..];
        let params = ParamStore::read_from(&mut r)?;
        if !r.is_empty() {
            return Err(MafnError::Data(format!("{} trailing bytes after checkpoint", r.len())));
        }
        Ok(Self {
            config: header.config,
            dims: header.dims,
            clusters: header.clusters,
            stats: header.stats,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| MafnError::io(path, e))?;
        f.write_all(&bytes).map_err(|e| MafnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| MafnError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| MafnError::Data("checkpoint truncated".into()))
}
