use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use poretopo::grid::{new_grid, save_grid, PhaseLabel};
use poretopo::nn::load_checkpoint;
use poretopo::topology::read_features;

fn poretopo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poretopo")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = poretopo(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// All files of a directory, sorted, with their bytes.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn small_dataset(root: &Path, n: usize) -> (PathBuf, PathBuf, PathBuf) {
    let grids = root.join("grids");
    let desc = root.join("descriptors.csv");
    let feats = root.join("features");
    ok(&["generate", "--out", s(&grids), "--n", &n.to_string(), "--dims", "16", "--seed", "3"]);
    ok(&["characterize", "--in", s(&grids), "--out", s(&desc)]);
    ok(&["featurize", "--in", s(&grids), "--out", s(&feats), "--res", "8", "--seed", "3"]);
    (grids, desc, feats)
}

#[test]
fn generate_is_byte_identical_across_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&["generate", "--out", s(d), "--n", "2", "--seed", "7", "--dims", "20"]);
    }
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert_eq!(sa.len(), 4, "two grids, manifest and its sidecar");
    assert_eq!(sa, sb);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["samples"].as_array().unwrap().len(), 2);
    assert!(manifest["samples"][0]["seed"].is_u64());

    let c = tmp.path().join("c");
    ok(&["generate", "--out", s(&c), "--n", "2", "--seed", "8", "--dims", "20"]);
    assert_ne!(fs::read(a.join("s0000.mstr")).unwrap(), fs::read(c.join("s0000.mstr")).unwrap());
}

#[test]
fn unwritable_output_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("occupied");
    fs::write(&file, b"x").unwrap();
    let out = poretopo(&["generate", "--out", s(&file.join("sub")), "--n", "1", "--dims", "8"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(poretopo(&["generate"]).status.code(), Some(1));
    assert_eq!(poretopo(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(poretopo(&["--help"]).status.code(), Some(0));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"sed": 1}"#).unwrap();
    let out = poretopo(&["generate", "--out", s(tmp.path()), "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn characterize_reports_straight_channel_and_skips_truncated_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let grids = tmp.path().join("grids");
    fs::create_dir_all(&grids).unwrap();
    // Ni column along z through YSZ, pore elsewhere in a corner block.
    let mut g = new_grid(10, 10, 10, 0.1, PhaseLabel::Ysz).unwrap();
    for z in 0..10 {
        for x in 3..6 {
            for y in 3..6 {
                g.set(x, y, z, PhaseLabel::Ni);
            }
        }
        g.set(0, 0, z, PhaseLabel::Pore);
    }
    save_grid(&g, &grids.join("a.mstr")).unwrap();
    save_grid(&g, &grids.join("b.mstr")).unwrap();
    let bytes = fs::read(grids.join("b.mstr")).unwrap();
    fs::write(grids.join("b.mstr"), &bytes[..bytes.len() / 2]).unwrap();

    let csv = tmp.path().join("descriptors.csv");
    let out = poretopo(&["characterize", "--in", s(&grids), "--out", s(&csv)]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("skipping b"), "{stderr}");

    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "header and one row");
    let header: Vec<&str> = lines[0].split(',').collect();
    let row: Vec<&str> = lines[1].split(',').collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(col("sample_id"), "a");
    let tau: f64 = col("tau_ni").parse().unwrap();
    assert!((tau - 1.0).abs() < 1e-3, "tau_ni = {tau}");
    assert!((col("vf_ni").parse::<f64>().unwrap() - 0.09).abs() < 1e-12);
    assert!(csv.with_file_name("descriptors.csv.meta.json").exists());
}

#[test]
fn featurize_validates_params_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let grids = tmp.path().join("grids");
    ok(&["generate", "--out", s(&grids), "--n", "5", "--dims", "12", "--seed", "1"]);

    let out = poretopo(&["featurize", "--in", s(&grids), "--out", s(&tmp.path().join("f0")), "--gamma", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let out = poretopo(&["featurize", "--in", s(&grids), "--out", s(&tmp.path().join("f0")), "--sigma", "-1"]);
    assert_eq!(out.status.code(), Some(1));

    let (a, b) = (tmp.path().join("fa"), tmp.path().join("fb"));
    ok(&["featurize", "--in", s(&grids), "--out", s(&a)]);
    ok(&["featurize", "--in", s(&grids), "--out", s(&b)]);
    assert_eq!(snapshot(&a), snapshot(&b));

    let (header, set) = read_features(fs::File::open(a.join("s0000.pi")).unwrap()).unwrap();
    assert_eq!(set.values.len(), 9 * 32 * 32);
    assert_eq!(header.params.resolution, 32);
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(a.join("split.json.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config_hash"].as_str().unwrap(), header.config_hash);
    let split: serde_json::Value = serde_json::from_slice(&fs::read(a.join("split.json")).unwrap()).unwrap();
    let sizes: Vec<usize> = ["train", "val", "test"].iter().map(|k| split[k].as_array().unwrap().len()).collect();
    assert_eq!(sizes, [3, 0, 2]);
}

#[test]
fn train_evaluate_ablate_and_hpo_run_on_a_small_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let (_, desc, feats) = small_dataset(root, 24);
    let cfg = root.join("config.json");
    fs::write(
        &cfg,
        r#"{"seed": 3, "train": {"max_epochs": 4},
            "model": {"pi_branch_widths": [16, 8], "phase_branch_widths": [16, 8], "head_widths": [16, 8, 4], "encoding_length": 8}}"#,
    )
    .unwrap();
    let common = |args: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = args.iter().map(|a| a.to_string()).collect();
        v.extend(["--features", s(&feats), "--descriptors", s(&desc), "--config", s(&cfg)].map(String::from));
        v
    };
    let run = |args: Vec<String>| poretopo(&args.iter().map(|a| a.as_str()).collect::<Vec<_>>());

    let bogus = run(common(&["train", "--target", "bogus", "--out", s(&root.join("m"))]));
    assert_eq!(bogus.status.code(), Some(1));
    let missing = poretopo(&["train", "--target", "l_tpb", "--out", s(&root.join("m")), "--features", s(&root.join("nope")), "--descriptors", s(&desc)]);
    assert_eq!(missing.status.code(), Some(2));

    let models = root.join("models");
    let out = run(common(&["train", "--target", "l_tpb", "--runs", "2", "--drop-phase", "ni", "--out", s(&models)]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (manifest, params) = load_checkpoint(&models.join("run_01")).unwrap();
    assert_eq!(manifest.config.channels(), 6);
    assert_eq!(manifest.seed, 4);
    assert_eq!(params.config.phases, vec![PhaseLabel::Ysz, PhaseLabel::Pore]);
    assert!(models.join("history_00.json").exists());

    let report = root.join("report");
    let out = run(common(&["evaluate", "--models", s(&models), "--out", s(&report)]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(report.join("metrics.csv")).unwrap();
    let runs: Vec<&str> = csv.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(runs, ["run", "run_00", "run_01", "mean", "std"]);
    assert_eq!(csv.lines().next().unwrap(), "run,mse,mae,r2,pearson,spearman");

    let abl = root.join("ablation");
    let out = run(common(&["ablate", "--target", "l_tpb", "--runs", "2", "--drop-phase", "pore", "--out", s(&abl)]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(abl.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("without_pore,l_tpb,")));

    let search = root.join("hpo");
    let hpo_args = |resume: bool| {
        let mut v = common(&["hpo", "--n1", "3", "--n2", "2", "--max-epochs", "2", "--out", s(&search)]);
        if resume {
            v.push("--resume".into());
        }
        v
    };
    let out = run(hpo_args(false));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(search.join("trials.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 5);
    let best: serde_json::Value = serde_json::from_slice(&fs::read(search.join("best.json")).unwrap()).unwrap();
    assert!(best["best_objective"].as_f64().unwrap().is_finite());

    // Resuming from a log torn after three trials replays them and reruns the rest.
    let kept: Vec<&str> = log.lines().take(3).collect();
    fs::write(search.join("trials.jsonl"), format!("{}\n{{\"number\": 3, \"pha", kept.join("\n"))).unwrap();
    let out = run(hpo_args(true));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let resumed: serde_json::Value = serde_json::from_slice(&fs::read(search.join("best.json")).unwrap()).unwrap();
    assert_eq!(resumed["best"], best["best"]);
    assert_eq!(resumed["best_objective"], best["best_objective"]);
    let relog = fs::read_to_string(search.join("trials.jsonl")).unwrap();
    assert_eq!(relog.lines().count(), 5);
}
