//! Single-file checkpoints: JSON metadata followed by the parameter block.
//!
//! Layout: magic `RPRCKPT1`, `u64` metadata length, UTF-8 JSON metadata,
//! then [`ParamStore::encode`] output. Byte output is deterministic for a
//! given network state.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

use super::backbone::{IMAGENET_MEAN, IMAGENET_STD};
use super::network::{NetworkConfig, RprNetwork};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RPRCKPT1";
pub const FORMAT_VERSION: u32 = 1;

/// Crate version, with `git describe` output appended when the build
/// environment provides `RPR_GIT_DESCRIBE`.
pub fn code_version() -> String {
    match option_env!("RPR_GIT_DESCRIBE") {
        Some(g) => format!("{} ({g})", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub code_version: String,
    pub network: NetworkConfig,
    pub backbone: String,
    pub channels: (usize, usize),
    pub rgb_mean: [f64; 3],
    pub rgb_std: [f64; 3],
    /// Free-form training state (epoch, optimizer settings, ...).
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn from_network(net: &RprNetwork, backbone: &str) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                format_version: FORMAT_VERSION,
                code_version: code_version(),
                network: net.config().clone(),
                backbone: backbone.to_string(),
                channels: net.channels(),
                rgb_mean: IMAGENET_MEAN,
                rgb_std: IMAGENET_STD,
                extra: BTreeMap::new(),
            },
            params: net.params().clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + meta.len() + 8 * self.params.scalar_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        self.params.encode(&mut out);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad checkpoint magic".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let end = 16usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated metadata".into()))?;
        let meta: CheckpointMeta =
            serde_json::from_slice(&bytes[16..end]).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", meta.format_version)));
        }
        let (params, used) = ParamStore::decode(&bytes[end..])?;
        if end + used != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after parameters".into()));
        }
        Ok(Checkpoint { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }

    /// Rebuilds the network; fails unless the stored parameters match the
    /// architecture implied by the stored config exactly.
    pub fn to_network(&self) -> Result<RprNetwork> {
        let mut net = RprNetwork::new(&self.meta.network, self.meta.channels)?;
        net.params_mut().load_from(&self.params)?;
        Ok(net)
    }

    /// Checks that this checkpoint was trained with `config` on `backbone`.
    pub fn ensure_compatible(&self, config: &NetworkConfig, backbone: &str) -> Result<()> {
        if &self.meta.network != config {
            return Err(Error::Checkpoint("network config differs from checkpoint".into()));
        }
        if self.meta.backbone != backbone {
            return Err(Error::Checkpoint(format!(
                "checkpoint backbone {:?} differs from {backbone:?}",
                self.meta.backbone
            )));
        }
        Ok(())
    }
}
