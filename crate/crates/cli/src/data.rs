//! Artifact layout of a featurized dataset and per-target views of it.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use poretopo::descriptors::{read_descriptor_csv, DescriptorVector, Target};
use poretopo::features::{fit_transform, SplitIndex, TransformParams};
use poretopo::grid::PhaseLabel;
use poretopo::nn::{predict, Batch, ModelParams};
use poretopo::stats::{metrics, Metrics};
use poretopo::topology::{read_diagram_csv, read_features, ChannelRanges, FeatureSet, PhaseDiagrams, PiParams};
use serde::{Deserialize, Serialize};

use crate::config::read_json;
use crate::error::{CliError, CliResult};

pub const SPLIT_FILE: &str = "split.json";
pub const RANGES_FILE: &str = "ranges.json";
pub const DIAGRAMS_FILE: &str = "diagrams.csv";
pub const FEATURE_EXT: &str = "pi";
pub const GRID_EXT: &str = "mstr";

/// Sample ids per split, fixed once at featurization and shared by every
/// later run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub seed: u64,
    pub fractions: [f64; 3],
    pub rounding: String,
    pub ids: Vec<String>,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitFile {
    pub fn new(ids: Vec<String>, s: &SplitIndex, seed: u64, fractions: (f64, f64, f64)) -> Self {
        let pick = |idx: &[usize]| idx.iter().map(|&i| ids[i].clone()).collect();
        SplitFile {
            seed,
            fractions: [fractions.0, fractions.1, fractions.2],
            rounding: "train = floor(f_train * n), val = floor(f_val * n), test = remainder".into(),
            train: pick(&s.train),
            val: pick(&s.val),
            test: pick(&s.test),
            ids,
        }
    }

    pub fn index(&self) -> CliResult<SplitIndex> {
        let pos: HashMap<&str, usize> = self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let map = |v: &[String]| -> CliResult<Vec<usize>> {
            v.iter()
                .map(|id| pos.get(id.as_str()).copied().ok_or_else(|| CliError::Data(format!("split names unknown sample {id}"))))
                .collect()
        };
        Ok(SplitIndex { train: map(&self.train)?, val: map(&self.val)?, test: map(&self.test)? })
    }
}

/// Sorted `*.ext` files of a directory with their stems as ids.
pub fn list_samples(dir: &Path, ext: &str) -> CliResult<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Data(format!("cannot read {}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::Data(e.to_string()))?.path();
        if path.extension().is_some_and(|x| x == ext) {
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            out.push((id, path));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CliError::Data(format!("no .{ext} files in {}", dir.display())));
    }
    Ok(out)
}

pub struct FeatureStore {
    pub ids: Vec<String>,
    pub split: SplitIndex,
    pub features: Vec<FeatureSet>,
    pub params: PiParams,
    pub ranges: ChannelRanges,
}

pub fn load_feature_store(dir: &Path) -> CliResult<FeatureStore> {
    let split_file: SplitFile = read_json(&dir.join(SPLIT_FILE))?;
    let split = split_file.index()?;
    let mut features = Vec::with_capacity(split_file.ids.len());
    let mut params = None;
    let mut ranges = None;
    for id in &split_file.ids {
        let path = dir.join(format!("{id}.{FEATURE_EXT}"));
        let f = File::open(&path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
        let (header, set) = read_features(BufReader::new(f)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if params.is_some_and(|p| p != header.params) {
            return Err(CliError::Data(format!("{} uses different image parameters", path.display())));
        }
        params = Some(header.params);
        ranges.get_or_insert(header.ranges);
        features.push(set);
    }
    Ok(FeatureStore {
        ids: split_file.ids,
        split,
        features,
        params: params.ok_or_else(|| CliError::Data("empty feature store".into()))?,
        ranges: ranges.expect("set with params"),
    })
}

pub fn load_diagrams(dir: &Path, ids: &[String]) -> CliResult<Vec<PhaseDiagrams>> {
    let path = dir.join(DIAGRAMS_FILE);
    let f = File::open(&path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    Ok(read_diagram_csv(BufReader::new(f), ids)?)
}

pub fn load_descriptors(path: &Path) -> CliResult<HashMap<String, DescriptorVector>> {
    let f = File::open(path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    Ok(read_descriptor_csv(BufReader::new(f))?.into_iter().collect())
}

pub fn parse_target(s: &str) -> CliResult<Target> {
    Target::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Target::ALL.iter().map(|t| t.name()).collect();
        CliError::Usage(format!("unknown target {s:?}; expected one of {}", names.join(", ")))
    })
}

/// Samples with a defined value of one target; split positions index `rows`.
#[derive(Debug, Clone)]
pub struct TargetData {
    pub target: Target,
    /// Feature-store indices.
    pub rows: Vec<usize>,
    pub raw: Vec<f64>,
    pub split: SplitIndex,
    pub excluded: usize,
}

pub fn target_data(ids: &[String], split: &SplitIndex, desc: &HashMap<String, DescriptorVector>, target: Target) -> CliResult<TargetData> {
    let mut local = vec![usize::MAX; ids.len()];
    let (mut rows, mut raw) = (Vec::new(), Vec::new());
    for (i, id) in ids.iter().enumerate() {
        if let Some(v) = desc.get(id).and_then(|d| d.get(target)) {
            local[i] = rows.len();
            rows.push(i);
            raw.push(v);
        }
    }
    let remap = |v: &[usize]| -> Vec<usize> { v.iter().map(|&i| local[i]).filter(|&j| j != usize::MAX).collect() };
    let split = SplitIndex { train: remap(&split.train), val: remap(&split.val), test: remap(&split.test) };
    if split.train.len() < 3 || split.val.is_empty() || split.test.is_empty() {
        return Err(CliError::Data(format!(
            "target {target} has too few defined values ({} train, {} val, {} test)",
            split.train.len(),
            split.val.len(),
            split.test.len()
        )));
    }
    Ok(TargetData { target, excluded: ids.len() - rows.len(), rows, raw, split })
}

impl TargetData {
    pub fn fit_transform(&self) -> CliResult<TransformParams> {
        let train: Vec<f64> = self.split.train.iter().map(|&i| self.raw[i]).collect();
        Ok(fit_transform(&train)?)
    }

    pub fn scaled(&self, t: &TransformParams) -> Vec<f64> {
        self.raw.iter().map(|v| t.apply(*v)).collect()
    }

    pub fn batch(&self, features: &[FeatureSet], phases: &[PhaseLabel]) -> CliResult<Batch> {
        let sets: Vec<&FeatureSet> = self.rows.iter().map(|&i| &features[i]).collect();
        Ok(Batch::from_features(&sets, phases)?)
    }
}

/// Test-split metrics in the scaled target space.
pub fn test_metrics(p: &ModelParams, batch: &Batch, scaled: &[f64], test: &[usize]) -> CliResult<Metrics> {
    let pred = predict(p, &batch.select(test))?;
    let truth: Vec<f64> = test.iter().map(|&i| scaled[i]).collect();
    Ok(metrics(&pred, &truth)?)
}

pub fn parse_phase(s: &str) -> CliResult<PhaseLabel> {
    PhaseLabel::parse(s).ok_or_else(|| CliError::Usage(format!("unknown phase {s:?}; expected ni, ysz or pore")))
}

pub fn phases_without(drop: Option<PhaseLabel>) -> Vec<PhaseLabel> {
    PhaseLabel::ALL.into_iter().filter(|p| Some(*p) != drop).collect()
}
