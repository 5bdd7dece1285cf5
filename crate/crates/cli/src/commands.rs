use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use poretopo::descriptors::{characterize_with, write_descriptor_csv, DescriptorVector, Target};
use poretopo::features::{split, TransformParams};
use poretopo::grid::{crop_interior, crop_margin, generate_microstructure, load_grid, save_grid, volume_fractions, Dims, GeneratorConfig, PhaseFractions, PhaseLabel};
use poretopo::hpo::{read_trials, run_hpo, Assignment, Dimension, HpoSettings, SearchSpace};
use poretopo::nn::{load_checkpoint, save_checkpoint, train as fit, Activation, CheckpointManifest, ModelParams, TrainConfig, TrainHistory};
use poretopo::stats::{ablation_compare, summarize, Comparison, Metrics};
use poretopo::topology::{featurize_diagrams, phase_diagrams, write_diagram_csv, write_features, ChannelRanges, FeatureHeader, FeatureSet, PhaseDiagrams, PiParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{write_json, write_meta, ModelSettings, PipelineConfig};
use crate::data::*;
use crate::error::{CliError, CliResult};

const FILTRATION: &str = "signed_distance_sublevel";

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn create_file(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> CliResult<()> {
    w.flush().map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn check_range(name: &str, r: [f64; 2]) -> CliResult<()> {
    if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{name} must be an ordered pair, got {r:?}")))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleEntry {
    id: String,
    file: String,
    seed: u64,
    target_fractions: PhaseFractions,
    mean_particle_radius: f64,
    fractions: PhaseFractions,
}

pub fn generate(cfg: &PipelineConfig, out: &Path) -> CliResult<()> {
    let g = &cfg.generator;
    check_range("ni_range", g.ni_range)?;
    check_range("ysz_range", g.ysz_range)?;
    check_range("radius_range", g.radius_range)?;
    if g.ni_range[1] + g.ysz_range[1] >= 1.0 {
        return Err(CliError::Usage("ni and ysz ranges leave no room for pore".into()));
    }
    if g.dims == 0 || g.n == 0 {
        return Err(CliError::Usage("n and dims must be positive".into()));
    }
    let margin = if g.crop { crop_margin(g.dims, g.outer_len, g.inner_len) } else { 0 };
    let outer = Dims::cube(g.dims + 2 * margin);
    create_dir(out)?;
    let entries = (0..g.n)
        .into_par_iter()
        .map(|i| -> CliResult<SampleEntry> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let ni = rng.random_range(g.ni_range[0]..=g.ni_range[1]);
            let ysz = rng.random_range(g.ysz_range[0]..=g.ysz_range[1]);
            let radius = rng.random_range(g.radius_range[0]..=g.radius_range[1]);
            let seed: u64 = rng.random();
            let gc = GeneratorConfig {
                target_fractions: PhaseFractions::new(ni, ysz, 1.0 - ni - ysz),
                mean_particle_radius: radius,
                ca_iterations: g.ca_iterations,
                seed,
            };
            let mut grid = generate_microstructure(&gc, outer, g.voxel_size)?;
            if margin > 0 {
                grid = crop_interior(&grid, margin)?;
            }
            let id = format!("s{i:04}");
            let file = format!("{id}.{GRID_EXT}");
            save_grid(&grid, &out.join(&file)).map_err(|e| CliError::Data(format!("cannot write {file}: {e}")))?;
            Ok(SampleEntry {
                id,
                file,
                seed,
                target_fractions: gc.target_fractions,
                mean_particle_radius: radius,
                fractions: volume_fractions(&grid),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let path = out.join("manifest.json");
    write_json(
        &path,
        &json!({
            "n": g.n,
            "dims": [g.dims, g.dims, g.dims],
            "voxel_size_um": g.voxel_size,
            "crop_margin": margin,
            "config_hash": cfg.hash(),
            "samples": entries,
        }),
    )?;
    write_meta(&path, "generate", cfg, serde_json::Value::Null)
}

/// Loads every grid, keeping per-file failures so callers can skip them.
fn load_all<T: Send>(
    dir: &Path,
    f: impl Fn(&poretopo::grid::PhaseGrid) -> poretopo::Result<T> + Sync,
) -> CliResult<(Vec<(String, T)>, Option<CliError>)> {
    let samples = list_samples(dir, GRID_EXT)?;
    let results: Vec<(String, CliResult<T>)> = samples
        .par_iter()
        .map(|(id, path)| {
            let r = load_grid(path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
                .and_then(|g| f(&g).map_err(|e| CliError::from(e)));
            (id.clone(), r)
        })
        .collect();
    let mut ok = Vec::new();
    let mut worst: Option<CliError> = None;
    let mut skipped = 0;
    for (id, r) in results {
        match r {
            Ok(v) => ok.push((id, v)),
            Err(e) => {
                eprintln!("warning: skipping {id}: {e}");
                skipped += 1;
                if worst.as_ref().is_none_or(|w| e.exit_code() > w.exit_code()) {
                    worst = Some(e);
                }
            }
        }
    }
    let failure = worst.map(|w| {
        let msg = format!("{skipped} of {} grids skipped", samples.len());
        match w {
            CliError::Numeric(_) => CliError::Numeric(msg),
            _ => CliError::Data(msg),
        }
    });
    Ok((ok, failure))
}

pub fn characterize(cfg: &PipelineConfig, input: &Path, out: &Path) -> CliResult<()> {
    let settings = cfg.tortuosity;
    let (rows, failure): (Vec<(String, DescriptorVector)>, _) = load_all(input, |g| characterize_with(g, &settings))?;
    let mut w = create_file(out)?;
    write_descriptor_csv(&rows, &mut w)?;
    finish(w, out)?;
    write_meta(out, "characterize", cfg, json!({ "rows": rows.len(), "undefined": "empty field" }))?;
    failure.map_or(Ok(()), Err)
}

pub fn featurize(cfg: &PipelineConfig, input: &Path, out: &Path) -> CliResult<()> {
    cfg.pi.validate()?;
    let (rows, failure): (Vec<(String, PhaseDiagrams)>, _) = load_all(input, |g| Ok(phase_diagrams(g)))?;
    let ids: Vec<String> = rows.iter().map(|(id, _)| id.clone()).collect();
    let fractions = cfg.split_fractions();
    let s = split(ids.len(), fractions, cfg.seed)?;
    let ranges = ChannelRanges::fit(s.train.iter().map(|&i| &rows[i].1), cfg.pi.sigma);
    for r in &ranges.0 {
        r.validate()?;
    }
    create_dir(out)?;
    let hash = cfg.hash();
    rows.par_iter()
        .map(|(id, d)| -> CliResult<()> {
            let header = FeatureHeader {
                sample_id: id.clone(),
                params: cfg.pi,
                ranges: ranges.clone(),
                filtration: FILTRATION.into(),
                config_hash: hash.clone(),
            };
            let path = out.join(format!("{id}.{FEATURE_EXT}"));
            let mut w = create_file(&path)?;
            write_features(&header, &featurize_diagrams(d, &cfg.pi, &ranges), &mut w)?;
            finish(w, &path)
        })
        .collect::<CliResult<()>>()?;

    let diag_path = out.join(DIAGRAMS_FILE);
    let mut w = create_file(&diag_path)?;
    write_diagram_csv(&rows, &mut w)?;
    finish(w, &diag_path)?;
    write_meta(&diag_path, "featurize", cfg, json!({ "units": "um" }))?;

    let ranges_path = out.join(RANGES_FILE);
    write_json(&ranges_path, &json!({ "fit_on": "train", "filtration": FILTRATION, "params": cfg.pi, "ranges": ranges }))?;
    write_meta(&ranges_path, "featurize", cfg, serde_json::Value::Null)?;

    let split_path = out.join(SPLIT_FILE);
    write_json(&split_path, &SplitFile::new(ids, &s, cfg.seed, fractions))?;
    write_meta(&split_path, "featurize", cfg, serde_json::Value::Null)?;
    failure.map_or(Ok(()), Err)
}

/// One target prepared for training: data, transform and scaled values.
struct Prepared {
    data: TargetData,
    transform: TransformParams,
    scaled: Vec<f64>,
}

fn prepare(store: &FeatureStore, desc: &std::collections::HashMap<String, DescriptorVector>, target: Target) -> CliResult<Prepared> {
    let data = target_data(&store.ids, &store.split, desc, target)?;
    let transform = data.fit_transform()?;
    let scaled = data.scaled(&transform);
    Ok(Prepared { data, transform, scaled })
}

/// Independent runs with seeds `cfg.seed + r`; every run uses the same split.
fn fit_runs(
    cfg: &PipelineConfig,
    model: &ModelSettings,
    features: &[FeatureSet],
    p: &Prepared,
    phases: &[PhaseLabel],
    runs: usize,
) -> CliResult<Vec<(ModelParams, TrainHistory, Metrics)>> {
    let batch = p.data.batch(features, phases)?;
    let resolution = features.first().map_or(0, |f| f.resolution);
    let mcfg = model.to_config(phases.to_vec(), resolution * resolution);
    mcfg.validate()?;
    (0..runs)
        .into_par_iter()
        .map(|r| {
            let tcfg = TrainConfig { seed: cfg.seed + r as u64, ..cfg.train.clone() };
            let (params, history) = fit(&mcfg, &tcfg, &batch, &p.scaled, &p.data.split)?;
            let m = test_metrics(&params, &batch, &p.scaled, &p.data.split.test)?;
            Ok((params, history, m))
        })
        .collect()
}

pub fn train(
    cfg: &PipelineConfig,
    features: &Path,
    descriptors: &Path,
    target: Target,
    runs: usize,
    drop: &[PhaseLabel],
    out: &Path,
) -> CliResult<()> {
    let store = load_feature_store(features)?;
    let desc = load_descriptors(descriptors)?;
    let prepared = prepare(&store, &desc, target)?;
    let phases: Vec<PhaseLabel> = PhaseLabel::ALL.into_iter().filter(|p| !drop.contains(p)).collect();
    let outcomes = fit_runs(cfg, &cfg.model, &store.features, &prepared, &phases, runs)?;
    create_dir(out)?;
    let hash = cfg.hash();
    for (r, (params, history, _)) in outcomes.iter().enumerate() {
        let prefix = out.join(format!("run_{r:02}"));
        let manifest = CheckpointManifest {
            target: target.name().into(),
            config: params.config.clone(),
            train: TrainConfig { seed: cfg.seed + r as u64, ..cfg.train.clone() },
            seed: cfg.seed + r as u64,
            transform: prepared.transform,
            pi_params: store.params,
            ranges: store.ranges.clone(),
            best_epoch: history.best_epoch,
            n_values: params.to_flat().len(),
            config_hash: hash.clone(),
        };
        save_checkpoint(&prefix, &manifest, params)?;
        let ckpt = prefix.with_extension("json");
        write_meta(&ckpt, "train", cfg, json!({ "target": target.name(), "run": r, "excluded_undefined": prepared.data.excluded }))?;
        let hist = out.join(format!("history_{r:02}.json"));
        write_json(&hist, history)?;
        write_meta(&hist, "train", cfg, json!({ "target": target.name(), "run": r }))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct MetricsRow {
    run: String,
    #[serde(flatten)]
    metrics: Metrics,
}

fn metrics_csv(rows: &[MetricsRow], path: &Path) -> CliResult<()> {
    let mut w = create_file(path)?;
    let io = |e: std::io::Error| CliError::Data(format!("cannot write {}: {e}", path.display()));
    writeln!(w, "run,{}", Metrics::NAMES.join(",")).map_err(io)?;
    for r in rows {
        let vals: Vec<String> = r.metrics.values().iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{}", r.run, vals.join(",")).map_err(io)?;
    }
    finish(w, path)
}

pub fn evaluate(cfg: &PipelineConfig, features: &Path, descriptors: &Path, models: &Path, out: &Path) -> CliResult<()> {
    let store = load_feature_store(features)?;
    let desc = load_descriptors(descriptors)?;
    let mut prefixes: Vec<PathBuf> = list_samples(models, "json")?
        .into_iter()
        .filter(|(id, _)| id.starts_with("run_") && !id.contains('.'))
        .map(|(_, p)| p.with_extension(""))
        .collect();
    prefixes.sort();
    if prefixes.is_empty() {
        return Err(CliError::Data(format!("no checkpoints in {}", models.display())));
    }
    let mut rows = Vec::new();
    let mut target_name = None;
    for prefix in &prefixes {
        let (manifest, params) =
            load_checkpoint(prefix).map_err(|e| CliError::Data(format!("checkpoint {}: {e}", prefix.display())))?;
        if manifest.pi_params != store.params || manifest.ranges != store.ranges {
            return Err(CliError::Data(format!("{} was trained on different features", prefix.display())));
        }
        if target_name.get_or_insert_with(|| manifest.target.clone()) != &manifest.target {
            return Err(CliError::Data("checkpoints disagree on the target".into()));
        }
        let target = parse_target(&manifest.target).map_err(|e| CliError::Data(e.to_string()))?;
        let data = target_data(&store.ids, &store.split, &desc, target)?;
        let scaled = data.scaled(&manifest.transform);
        let batch = data.batch(&store.features, &manifest.config.phases)?;
        let m = test_metrics(&params, &batch, &scaled, &data.split.test)?;
        let run = prefix.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        rows.push(MetricsRow { run, metrics: m });
    }
    let runs: Vec<Metrics> = rows.iter().map(|r| r.metrics).collect();
    let summary = summarize(&runs)?;
    rows.push(MetricsRow { run: "mean".into(), metrics: summary.mean });
    rows.push(MetricsRow { run: "std".into(), metrics: summary.std });
    create_dir(out)?;
    let target = target_name.unwrap_or_default();
    let csv = out.join("metrics.csv");
    metrics_csv(&rows, &csv)?;
    write_meta(&csv, "evaluate", cfg, json!({ "target": target, "space": "transformed" }))?;
    let js = out.join("metrics.json");
    write_json(&js, &json!({ "target": target, "space": "transformed", "split": "test", "rows": rows, "summary": summary }))?;
    write_meta(&js, "evaluate", cfg, serde_json::Value::Null)
}

#[derive(Debug, Serialize)]
struct AblationRow {
    variant: String,
    target: String,
    metric: String,
    full_mean: f64,
    variant_mean: f64,
    delta_mu: f64,
    cohens_d: f64,
    p_value: f64,
    ci_low: f64,
    ci_high: f64,
    significance: String,
}

impl AblationRow {
    fn new(variant: &str, target: Target, c: &Comparison, full: &[Metrics], var: &[Metrics]) -> Self {
        let idx = Metrics::NAMES.iter().position(|n| *n == c.metric).expect("known metric");
        let avg = |v: &[Metrics]| poretopo::stats::mean(&v.iter().map(|m| m.values()[idx]).collect::<Vec<_>>());
        AblationRow {
            variant: variant.into(),
            target: target.name().into(),
            metric: c.metric.clone(),
            full_mean: avg(full),
            variant_mean: avg(var),
            delta_mu: c.delta_mu,
            cohens_d: c.d,
            p_value: c.p,
            ci_low: c.ci95[0],
            ci_high: c.ci95[1],
            significance: c.tier.stars().into(),
        }
    }
}

pub fn ablate(
    cfg: &PipelineConfig,
    features: &Path,
    descriptors: &Path,
    targets: &[Target],
    drop: &[PhaseLabel],
    runs: usize,
    out: &Path,
) -> CliResult<()> {
    if runs < 2 {
        return Err(CliError::Usage("ablation needs at least 2 runs per model".into()));
    }
    let store = load_feature_store(features)?;
    let desc = load_descriptors(descriptors)?;
    let mut rows = Vec::new();
    for &target in targets {
        let prepared = prepare(&store, &desc, target)?;
        let full: Vec<Metrics> =
            fit_runs(cfg, &cfg.model, &store.features, &prepared, &PhaseLabel::ALL, runs)?.into_iter().map(|o| o.2).collect();
        for &phase in drop {
            let phases = phases_without(Some(phase));
            let var: Vec<Metrics> =
                fit_runs(cfg, &cfg.model, &store.features, &prepared, &phases, runs)?.into_iter().map(|o| o.2).collect();
            let variant = format!("without_{}", phase.name());
            for c in ablation_compare(&full, &var)? {
                rows.push(AblationRow::new(&variant, target, &c, &full, &var));
            }
        }
    }
    create_dir(out)?;
    let csv = out.join("ablation.csv");
    let mut w = create_file(&csv)?;
    let io = |e: std::io::Error| CliError::Data(format!("cannot write {}: {e}", csv.display()));
    writeln!(w, "variant,target,metric,full_mean,variant_mean,delta_mu,cohens_d,p_value,ci_low,ci_high,significance").map_err(io)?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.variant, r.target, r.metric, r.full_mean, r.variant_mean, r.delta_mu, r.cohens_d, r.p_value, r.ci_low, r.ci_high, r.significance
        )
        .map_err(io)?;
    }
    finish(w, &csv)?;
    write_meta(&csv, "ablate", cfg, json!({ "runs": runs }))?;
    let js = out.join("ablation.json");
    write_json(
        &js,
        &json!({
            "convention": "delta_mu = mean(variant) - mean(full); cohens_d = delta_mu / pooled sd; ci is the Welch 95% interval of delta_mu; metrics on the test split in the transformed target space",
            "tiers": { "***": "p < 0.01", "**": "p < 0.05", "*": "p < 0.10" },
            "runs": runs,
            "rows": rows,
        }),
    )?;
    write_meta(&js, "ablate", cfg, serde_json::Value::Null)
}

/// Phase-1 search space: persistence-image parameters plus architecture and
/// training; widths are log2 exponents.
pub fn hpo_space1() -> SearchSpace {
    SearchSpace::new(vec![
        ("c", Dimension::Uniform { lo: 0.5, hi: 40.0 }),
        ("sigma", Dimension::LogUniform { lo: 1e-3, hi: 5e-2 }),
        ("gamma", Dimension::Integer { lo: 1, hi: 6 }),
        ("encoding", Dimension::Integer { lo: 4, hi: 7 }),
        ("main_neurons", Dimension::Integer { lo: 5, hi: 10 }),
        ("pi_neurons", Dimension::Integer { lo: 7, hi: 9 }),
        ("phase_neurons", Dimension::Integer { lo: 7, hi: 10 }),
        ("lr", Dimension::Uniform { lo: 1e-3, hi: 1e-2 }),
        ("weight_decay", Dimension::Uniform { lo: 1e-2, hi: 1.0 }),
        ("dropout_main", Dimension::Uniform { lo: 0.1, hi: 0.4 }),
        ("dropout_pi", Dimension::Uniform { lo: 0.1, hi: 0.4 }),
        ("dropout_phase", Dimension::Uniform { lo: 0.1, hi: 0.4 }),
    ])
    .expect("valid space")
}

/// Phase-2 space: refined training and regularization settings.
pub fn hpo_space2() -> SearchSpace {
    SearchSpace::new(vec![
        ("activation", Dimension::Categorical { options: vec!["selu".into(), "gelu".into(), "mish".into()] }),
        ("encoding", Dimension::Integer { lo: 3, hi: 6 }),
        ("lr", Dimension::Uniform { lo: 1e-3, hi: 1e-2 }),
        ("tmult", Dimension::Integer { lo: 1, hi: 5 }),
        ("weight_decay", Dimension::Uniform { lo: 0.1, hi: 1.0 }),
        ("dropout_main", Dimension::Uniform { lo: 0.2, hi: 0.4 }),
        ("dropout_pi", Dimension::Uniform { lo: 0.2, hi: 0.4 }),
    ])
    .expect("valid space")
}

/// Applies an assignment on top of the configured defaults.
pub fn apply_assignment(
    a: &Assignment,
    pi: &mut PiParams,
    model: &mut ModelSettings,
    train: &mut TrainConfig,
) -> poretopo::Result<()> {
    let bad = |k: &str| poretopo::Error::InvalidArgument(format!("bad value for {k}"));
    let float = |k: &str| a.get(k).map(|v| v.as_f64().ok_or_else(|| bad(k))).transpose();
    let int = |k: &str| -> poretopo::Result<Option<i64>> { a.get(k).map(|v| v.as_i64().ok_or_else(|| bad(k))).transpose() };
    let pow2 = |e: i64, k: &str| -> poretopo::Result<usize> {
        if (0..=20).contains(&e) { Ok(1usize << e) } else { Err(bad(k)) }
    };
    if let Some(v) = float("c")? {
        pi.c = v;
    }
    if let Some(v) = float("sigma")? {
        pi.sigma = v;
    }
    if let Some(v) = int("gamma")? {
        pi.gamma = u32::try_from(v).map_err(|_| bad("gamma"))?;
    }
    if let Some(e) = int("encoding")? {
        model.encoding_length = pow2(e, "encoding")?;
    }
    if let Some(e) = int("main_neurons")? {
        model.head_widths = vec![pow2(e, "main_neurons")?, pow2(e - 1, "main_neurons")?, pow2(e - 2, "main_neurons")?];
    }
    if let Some(e) = int("pi_neurons")? {
        model.pi_branch_widths = vec![pow2(e, "pi_neurons")?, pow2(e - 1, "pi_neurons")?];
    }
    if let Some(e) = int("phase_neurons")? {
        model.phase_branch_widths = vec![pow2(e, "phase_neurons")?, pow2(e - 1, "phase_neurons")?];
    }
    if let Some(v) = float("lr")? {
        train.lr0 = v;
    }
    if let Some(v) = float("weight_decay")? {
        train.weight_decay = v;
    }
    if let Some(v) = int("tmult")? {
        train.tmult = usize::try_from(v).map_err(|_| bad("tmult"))?;
    }
    if let Some(v) = float("dropout_main")? {
        model.dropout_main = v;
    }
    if let Some(v) = float("dropout_pi")? {
        model.dropout_pi = v;
    }
    if let Some(v) = float("dropout_phase")? {
        model.dropout_phase = v;
    }
    if let Some(v) = a.get("activation") {
        model.activation = v.as_str().and_then(Activation::parse).ok_or_else(|| bad("activation"))?;
    }
    Ok(())
}

pub fn hpo(cfg: &PipelineConfig, features: &Path, descriptors: &Path, out: &Path, resume: bool) -> CliResult<()> {
    let store = load_feature_store(features)?;
    let desc = load_descriptors(descriptors)?;
    let target = parse_target(&cfg.hpo.target)?;
    let diagrams = load_diagrams(features, &store.ids)?;
    let prepared = prepare(&store, &desc, target)?;
    create_dir(out)?;
    let log_path = out.join("trials.jsonl");
    let previous = if resume && log_path.exists() {
        let f = File::open(&log_path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", log_path.display())))?;
        read_trials(BufReader::new(f))?
    } else {
        Vec::new()
    };
    // Rewrite the log from the replayed records so a torn tail is dropped.
    let mut log = create_file(&log_path)?;
    for r in &previous {
        poretopo::hpo::write_trial(r, &mut log)?;
    }

    let train_diagrams: Vec<&PhaseDiagrams> = store.split.train.iter().map(|&i| &diagrams[i]).collect();
    let objective = |a: &Assignment| -> poretopo::Result<f64> {
        let mut pi = store.params;
        let mut model = cfg.model.clone();
        let mut tcfg = TrainConfig { seed: cfg.seed, ..cfg.train.clone() };
        apply_assignment(a, &mut pi, &mut model, &mut tcfg)?;
        pi.validate()?;
        let ranges = ChannelRanges::fit(train_diagrams.iter().copied(), pi.sigma);
        let feats: Vec<FeatureSet> = diagrams.par_iter().map(|d| featurize_diagrams(d, &pi, &ranges)).collect();
        let batch = prepared.data.batch(&feats, &PhaseLabel::ALL).map_err(|e| poretopo::Error::InvalidArgument(e.to_string()))?;
        let mcfg = model.to_config(PhaseLabel::ALL.to_vec(), pi.resolution * pi.resolution);
        let (_, h) = fit(&mcfg, &tcfg, &batch, &prepared.scaled, &prepared.data.split)?;
        Ok(h.val_loss[h.best_epoch - 1])
    };
    let settings = HpoSettings { n1: cfg.hpo.n1, n2: cfg.hpo.n2, seed: cfg.seed, ..HpoSettings::default() };
    let (space1, space2) = (hpo_space1(), hpo_space2());
    let result = run_hpo(objective, &space1, &space2, &settings, &previous, Some(&mut log as &mut dyn Write))?;
    finish(log, &log_path)?;
    write_meta(&log_path, "hpo", cfg, json!({ "target": target.name() }))?;

    let mut best_pi = store.params;
    let mut best_model = cfg.model.clone();
    let mut best_train = cfg.train.clone();
    apply_assignment(&result.best, &mut best_pi, &mut best_model, &mut best_train)?;
    let best_path = out.join("best.json");
    write_json(
        &best_path,
        &json!({
            "target": target.name(),
            "objective": "best validation MSE in the transformed target space",
            "best_objective": result.best_objective,
            "best": result.best,
            "pi": best_pi,
            "model": best_model,
            "train": best_train,
            "space1": space1,
            "space2_narrowed": result.space2,
            "trials": result.trials.len(),
        }),
    )?;
    write_meta(&best_path, "hpo", cfg, serde_json::Value::Null)
}
