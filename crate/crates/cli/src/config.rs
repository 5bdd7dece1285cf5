//! Pipeline configuration, its canonical hash and output sidecars.

use std::path::{Path, PathBuf};

use poretopo::descriptors::TortuositySettings;
use poretopo::grid::PhaseLabel;
use poretopo::nn::{Activation, NindenConfig, TrainConfig};
use poretopo::topology::PiParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSettings {
    pub n: usize,
    /// Edge length of the cropped cube, in voxels.
    pub dims: usize,
    /// µm per voxel.
    pub voxel_size: f64,
    /// Per-sample target fractions are drawn uniformly from these ranges;
    /// pore takes the remainder.
    pub ni_range: [f64; 2],
    pub ysz_range: [f64; 2],
    /// Mean sphere radius range, in voxels.
    pub radius_range: [f64; 2],
    pub ca_iterations: usize,
    /// Generate a larger domain and keep the centred cube.
    pub crop: bool,
    pub outer_len: f64,
    pub inner_len: f64,
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        Self {
            n: 200,
            dims: 64,
            voxel_size: 7.14 / 200.0,
            ni_range: [0.25, 0.40],
            ysz_range: [0.25, 0.40],
            radius_range: [2.0, 6.0],
            ca_iterations: 2,
            crop: true,
            outer_len: 10.0,
            inner_len: 7.14,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        let (train, val, test) = poretopo::features::DEFAULT_FRACTIONS;
        Self { train, val, test }
    }
}

/// Architecture settings; the phases and input size come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub activation: Activation,
    pub pi_branch_widths: Vec<usize>,
    pub phase_branch_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub encoding_length: usize,
    pub dropout_pi: f64,
    pub dropout_phase: f64,
    pub dropout_main: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let d = NindenConfig::default();
        Self {
            activation: d.activation,
            pi_branch_widths: d.pi_branch_widths,
            phase_branch_widths: d.phase_branch_widths,
            head_widths: d.head_widths,
            encoding_length: d.encoding_length,
            dropout_pi: d.dropout_pi,
            dropout_phase: d.dropout_phase,
            dropout_main: d.dropout_main,
        }
    }
}

impl ModelSettings {
    pub fn to_config(&self, phases: Vec<PhaseLabel>, input_size: usize) -> NindenConfig {
        NindenConfig {
            activation: self.activation,
            pi_branch_widths: self.pi_branch_widths.clone(),
            phase_branch_widths: self.phase_branch_widths.clone(),
            head_widths: self.head_widths.clone(),
            encoding_length: self.encoding_length,
            dropout_pi: self.dropout_pi,
            dropout_phase: self.dropout_phase,
            dropout_main: self.dropout_main,
            phases,
            input_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpoConfig {
    pub n1: usize,
    pub n2: usize,
    /// Pretext target optimized by the search.
    pub target: String,
}

impl Default for HpoConfig {
    fn default() -> Self {
        Self { n1: 50, n2: 50, target: "l_tpb_active".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub generator: GeneratorSettings,
    pub tortuosity: TortuositySettings,
    pub split: SplitSettings,
    pub pi: PiParams,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub hpo: HpoConfig,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let bytes = std::fs::read(p).map_err(|e| CliError::Data(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_slice(&bytes).map_err(|e| CliError::Usage(format!("bad config {}: {e}", p.display())))
            }
        }
    }

    pub fn split_fractions(&self) -> (f64, f64, f64) {
        (self.split.train, self.split.val, self.split.test)
    }

    /// SHA-256 of the canonical JSON: keys sorted, no whitespace.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical_json(&value).as_bytes()))
    }
}

pub fn canonical_json(v: &serde_json::Value) -> String {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let body: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", serde_json::to_string(k).expect("string"), canonical_json(&map[k])))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(items) => format!("[{}]", items.iter().map(canonical_json).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

/// Provenance written next to every output as `<file>.meta.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub command: String,
    pub config_hash: String,
    pub config: PipelineConfig,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

pub fn meta_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    output.with_file_name(name)
}

pub fn write_meta(output: &Path, command: &str, cfg: &PipelineConfig, extra: serde_json::Value) -> CliResult<()> {
    let meta = Meta { command: command.into(), config_hash: cfg.hash(), config: cfg.clone(), extra };
    write_json(&meta_path(output), &meta)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("malformed {}: {e}", path.display())))
}
