use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelParams, NindenConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::features::TransformParams;
use crate::topology::{ChannelRanges, PiParams};

/// JSON half of a checkpoint; the parameters live in a sibling `.bin` file
/// as little-endian f64 in [`ModelParams::to_flat`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub target: String,
    pub config: NindenConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub transform: TransformParams,
    pub pi_params: PiParams,
    pub ranges: ChannelRanges,
    pub best_epoch: usize,
    pub n_values: usize,
    pub config_hash: String,
}

fn paths(prefix: &Path) -> (PathBuf, PathBuf) {
    (prefix.with_extension("json"), prefix.with_extension("bin"))
}

pub fn save_checkpoint(prefix: &Path, manifest: &CheckpointManifest, p: &ModelParams) -> Result<()> {
    let flat = p.to_flat();
    if flat.len() != manifest.n_values || p.config != manifest.config {
        return Err(Error::InvalidArgument("manifest does not describe these parameters".into()));
    }
    let (json, bin) = paths(prefix);
    fs::write(json, serde_json::to_vec_pretty(manifest)?)?;
    fs::write(bin, flat.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>())?;
    Ok(())
}

pub fn load_checkpoint(prefix: &Path) -> Result<(CheckpointManifest, ModelParams)> {
    let (json, bin) = paths(prefix);
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(json)?)?;
    let bytes = fs::read(bin)?;
    if bytes.len() != manifest.n_values * 8 {
        return Err(Error::Format(format!("expected {} parameter bytes, found {}", manifest.n_values * 8, bytes.len())));
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    let p = ModelParams::from_flat(&manifest.config, &values)?;
    Ok((manifest, p))
}
