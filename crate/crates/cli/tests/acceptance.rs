//! Acceptance criteria, one line each. Runs without the libtest harness so
//! the verdict lines are never captured.

use std::collections::{HashMap, VecDeque};
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use poretopo::descriptors::{
    characterize, extract_surface, extract_tpb, laplacian_smooth, phase_percolation, tortuosity_factor,
    TortuositySettings,
};
use poretopo::grid::{Dims, PhaseGrid, PhaseLabel, PhaseMask};
use poretopo::hpo::{sample_random, tpe_suggest, Assignment, Dimension, SearchSpace, TpeSettings, TrialRecord, TrialStatus};
use poretopo::nn::{init, loss_and_gradients, Activation, Batch, NindenConfig};
use poretopo::stats::{cohens_d, compare, mean_diff_ci, metrics, welch_t, Tier};
use poretopo::topology::{
    brute_force_persistence, build_complex, compute_persistence, persistence_image, signed_distance_filtration,
    ChannelRange, FeatureSet, PersistenceDiagram, PersistencePair, PiParams,
};
use poretopo::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, budget: Duration) -> Result<(), String> {
    ensure(elapsed < budget, || format!("took {elapsed:.1?}, budget {budget:?}"))
}

// 1 ------------------------------------------------------------------------

fn persistence_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for t in 0..100 {
        let dims = Dims::new(rng.random_range(1..=6), rng.random_range(1..=6), rng.random_range(1..=6));
        let p = rng.random_range(0.2..0.8);
        let m = PhaseMask::from_fn(dims, |_, _, _| rng.random::<f64>() < p);
        let c = build_complex(&signed_distance_filtration(&m));
        let fast = compute_persistence(&c);
        let slow = brute_force_persistence(&c).map_err(|e| e.to_string())?;
        for k in 0..3 {
            ensure(multiset(&fast[k]) == multiset(&slow[k]), || format!("mask {t} ({dims:?}), H{k} differs"))?;
        }
    }
    within(start.elapsed(), Duration::from_secs(120))?;
    Ok(format!("100 masks equal as multisets in {:.1?}", start.elapsed()))
}

fn multiset(d: &PersistenceDiagram) -> Vec<(u64, u64)> {
    let mut v: Vec<(u64, u64)> = d.pairs.iter().map(|p| (p.birth.to_bits(), p.death.to_bits())).collect();
    v.sort_unstable();
    v
}

// 2 ------------------------------------------------------------------------

fn known_topology() -> Check {
    let diagrams = |m: &PhaseMask| compute_persistence(&build_complex(&signed_distance_filtration(m)));
    let blob = PhaseMask::from_fn(Dims::cube(7), |x, y, z| [x, y, z].iter().all(|c| (2..5).contains(c)));
    let d = diagrams(&blob);
    ensure(d[1].is_empty() && d[2].is_empty(), || format!("blob: {} H1, {} H2", d[1].len(), d[2].len()))?;

    let ring = PhaseMask::from_fn(Dims::new(5, 5, 3), |x, y, z| {
        z == 1 && (1..=3).contains(&x) && (1..=3).contains(&y) && (x, y) != (2, 2)
    });
    ensure(ring.count() == 8, || "ring fixture must have 8 voxels".into())?;
    let d = diagrams(&ring);
    ensure(d[1].len() == 1, || format!("ring: {} H1 pairs", d[1].len()))?;
    let p = d[1].pairs[0];
    ensure(p.birth < 0.0 && 0.0 < p.death, || format!("ring pair {p:?}"))?;

    let shell = PhaseMask::from_fn(Dims::cube(5), |x, y, z| [x, y, z].iter().any(|c| *c == 0 || *c == 4));
    let d = diagrams(&shell);
    ensure(d[2].len() == 1, || format!("shell: {} H2 pairs", d[2].len()))?;
    Ok("blob 0/0, ring 1 H1 straddling 0, shell 1 H2".into())
}

// 3 ------------------------------------------------------------------------

/// Weighted isotropic Gaussian on (birth, persistence), written out directly.
fn pi_density(b0: f64, p0: f64, params: &PiParams, x: f64, y: f64) -> f64 {
    let w = (params.c * p0.powi(params.gamma as i32)).atan();
    let s2 = params.sigma * params.sigma;
    w / (2.0 * PI * s2) * (-((x - b0).powi(2) + (y - p0).powi(2)) / (2.0 * s2)).exp()
}

/// Composite Simpson rule over one pixel, `n` (even) panels per side.
fn simpson_pixel(f: impl Fn(f64, f64) -> f64, x0: f64, x1: f64, y0: f64, y1: f64, n: usize) -> f64 {
    let (hx, hy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
    let wt = |i: usize| if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
    let mut s = 0.0;
    for j in 0..=n {
        let y = y0 + j as f64 * hy;
        for i in 0..=n {
            s += wt(i) * wt(j) * f(x0 + i as f64 * hx, y);
        }
    }
    s * hx * hy / 9.0
}

fn image_quadrature() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for t in 0..20 {
        let params = PiParams {
            c: rng.random_range(0.5..20.0),
            gamma: rng.random_range(1..=4),
            sigma: rng.random_range(0.02..0.08),
            resolution: rng.random_range(6..=12),
        };
        let range = ChannelRange { birth: [-0.5, 0.5], pers: [0.0, 0.8] };
        let (b0, p0) = (rng.random_range(-0.6..0.6), rng.random_range(0.01..0.9));
        let d = PersistenceDiagram::new(1, vec![PersistencePair { birth: b0, death: b0 + p0 }]);
        let img = persistence_image(&d, &params, &range);
        let res = params.resolution;
        let (wb, wp) = (1.0 / res as f64, 0.8 / res as f64);
        for row in 0..res {
            for col in 0..res {
                let (x0, y0) = (-0.5 + col as f64 * wb, row as f64 * wp);
                let q = simpson_pixel(|x, y| pi_density(b0, p0, &params, x, y), x0, x0 + wb, y0, y0 + wp, 200);
                let err = (img.get(row, col) - q).abs();
                worst = worst.max(err);
                ensure(err < 1e-6, || format!("diagram {t} pixel ({row},{col}): {} vs {q}", img.get(row, col)))?;
            }
        }
    }
    // A pair far from every edge carries its whole weight into the image.
    let params = PiParams { c: 3.0, gamma: 2, sigma: 0.01, resolution: 32 };
    let range = ChannelRange { birth: [-1.0, 1.0], pers: [0.0, 1.0] };
    let d = PersistenceDiagram::new(1, vec![PersistencePair { birth: 0.05, death: 0.45 }]);
    let total: f64 = persistence_image(&d, &params, &range).values.iter().sum();
    let w = (3.0f64 * 0.4f64.powi(2)).atan();
    ensure((total - w).abs() < 1e-6, || format!("interior mass {total} vs arctan(C p^γ) = {w}"))?;
    Ok(format!("20 diagrams, worst pixel error {worst:.1e}; interior mass error {:.1e}", (total - w).abs()))
}

// 4 ------------------------------------------------------------------------

/// Dense finite-volume solve: unit conductance between face neighbours,
/// half-cell Dirichlet faces at c = 1 (inlet) and c = 0 (outlet).
fn dense_tau(mask: &PhaseMask, axis: usize) -> Option<f64> {
    let dims = mask.dims();
    let n = dims.as_array();
    let reach = |start: &dyn Fn([usize; 3]) -> bool| -> Vec<bool> {
        let mut seen = vec![false; dims.len()];
        let mut q: VecDeque<usize> = (0..dims.len()).filter(|&i| mask.get(i) && start(dims.coords(i))).collect();
        q.iter().for_each(|&i| seen[i] = true);
        while let Some(i) = q.pop_front() {
            let c = dims.coords(i);
            for a in 0..3 {
                for s in [-1isize, 1] {
                    let mut o = [0isize; 3];
                    o[a] = s;
                    if let Some(j) = dims.offset(c, o) {
                        if mask.get(j) && !seen[j] {
                            seen[j] = true;
                            q.push_back(j);
                        }
                    }
                }
            }
        }
        seen
    };
    let from_in = reach(&|c| c[axis] == 0);
    let from_out = reach(&|c| c[axis] + 1 == n[axis]);
    let vox: Vec<usize> = (0..dims.len()).filter(|&i| from_in[i] && from_out[i]).collect();
    if vox.is_empty() {
        return None;
    }
    let index: HashMap<usize, usize> = vox.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    let m = vox.len();
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for (r, &i) in vox.iter().enumerate() {
        let c = dims.coords(i);
        for ax in 0..3 {
            for s in [-1isize, 1] {
                let mut o = [0isize; 3];
                o[ax] = s;
                if let Some(&k) = dims.offset(c, o).and_then(|j| index.get(&j)) {
                    a[(r, r)] += 1.0;
                    a[(r, k)] -= 1.0;
                }
            }
        }
        if c[axis] == 0 {
            a[(r, r)] += 2.0;
            rhs[r] += 2.0;
        }
        if c[axis] + 1 == n[axis] {
            a[(r, r)] += 2.0;
        }
    }
    let x = a.lu().solve(&rhs)?;
    let flux: f64 = vox.iter().enumerate().filter(|(_, &i)| dims.coords(i)[axis] == 0).map(|(r, _)| 2.0 * (1.0 - x[r])).sum();
    let area = (dims.len() / n[axis]) as f64;
    let d_eff = flux * n[axis] as f64 / area;
    let eps = mask.count() as f64 / dims.len() as f64;
    Some(eps / d_eff)
}

fn tortuosity() -> Check {
    let settings = TortuositySettings::default();
    let tau = |m: &PhaseMask| tortuosity_factor(m, 7.14 / 200.0, &settings);
    let dense = tau(&PhaseMask::from_fn(Dims::cube(8), |_, _, _| true)).map_err(|e| e.to_string())?.tau;
    ensure((dense - 1.0).abs() <= 1e-3, || format!("dense cube τ = {dense}"))?;
    let channel = PhaseMask::from_fn(Dims::new(9, 9, 12), |x, y, _| (3..6).contains(&x) && (2..5).contains(&y));
    let straight = tau(&channel).map_err(|e| e.to_string())?.tau;
    ensure((straight - 1.0).abs() <= 1e-3, || format!("straight channel τ = {straight}"))?;

    // A conduit that enters near one edge, crosses, and leaves near the other.
    let conduit = PhaseMask::from_fn(Dims::cube(8), |x, y, z| {
        let a = (1..3).contains(&x) && (1..4).contains(&y) && z <= 5;
        let b = (1..7).contains(&x) && (1..4).contains(&y) && (4..6).contains(&z);
        let c = (5..7).contains(&x) && (3..7).contains(&y) && (4..6).contains(&z);
        let d = (5..7).contains(&x) && (5..7).contains(&y) && z >= 4;
        a || b || c || d
    });
    let solved = tau(&conduit).map_err(|e| e.to_string())?.tau;
    let direct = dense_tau(&conduit, 2).ok_or("conduit does not percolate")?;
    ensure((solved - direct).abs() < 1e-6, || format!("conduit τ {solved} vs direct {direct}"))?;

    let blocked = PhaseMask::from_fn(Dims::cube(8), |_, _, z| z != 4);
    ensure(matches!(tau(&blocked), Err(Error::UndefinedDescriptor(_))), || "blocked phase must be undefined".into())?;
    let g = PhaseGrid::from_fn(Dims::cube(8), 1.0, |x, _, z| match (x, z) {
        (_, 4) => PhaseLabel::Ysz,
        (0..=3, _) => PhaseLabel::Ni,
        _ => PhaseLabel::Pore,
    })
    .map_err(|e| e.to_string())?;
    let d = characterize(&g).map_err(|e| e.to_string())?;
    ensure(d.tau_ni.is_none() && d.tau_pore.is_none(), || format!("expected flagged undefined τ, got {d:?}"))?;
    Ok(format!("dense {dense:.6}, channel {straight:.6}, conduit |Δ| {:.1e}, blocked flagged", (solved - direct).abs()))
}

// 5 ------------------------------------------------------------------------

fn tpb_fixture() -> Check {
    for &a in &[1.0, 0.5, 7.14 / 200.0] {
        let nz = 7;
        // Four columns along z: Ni, Ni / YSZ, pore around one shared edge.
        let g = PhaseGrid::from_fn(Dims::new(2, 2, nz), a, |x, y, _| match (x, y) {
            (_, 0) => PhaseLabel::Ni,
            (0, 1) => PhaseLabel::Ysz,
            _ => PhaseLabel::Pore,
        })
        .map_err(|e| e.to_string())?;
        let mesh = extract_surface(&g);
        let tpb = extract_tpb(&g, &mesh, &phase_percolation(&g));
        let volume = (4 * nz) as f64 * a * a * a;
        let expected = 1.0 / (4.0 * a * a);
        let (raw, raw_active) = tpb.lengths(mesh.positions());
        let (smooth, smooth_active) = tpb.lengths(&laplacian_smooth(&mesh, &tpb));
        for (what, v) in [("raw", raw), ("smoothed", smooth)] {
            ensure((v / volume - expected).abs() <= 1e-12 * expected, || format!("a = {a}: {what} density {} vs {expected}", v / volume))?;
        }
        ensure(raw_active == raw && smooth_active == smooth, || format!("a = {a}: active differs from total"))?;
    }
    Ok("density 1/(4a²) before and after smoothing, active = total".into())
}

// 6 ------------------------------------------------------------------------

fn gradient_checks() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (k, act) in Activation::ALL.into_iter().enumerate() {
        for dropout in [0.0, 0.25] {
            let cfg = NindenConfig {
                activation: act,
                pi_branch_widths: vec![5, 4],
                phase_branch_widths: vec![4],
                head_widths: vec![5, 4, 3],
                encoding_length: 3,
                dropout_pi: dropout,
                dropout_phase: dropout,
                dropout_main: dropout,
                phases: PhaseLabel::ALL.to_vec(),
                input_size: 4,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(60 + k as u64);
            let sets: Vec<FeatureSet> =
                (0..4).map(|_| FeatureSet { resolution: 2, values: (0..36).map(|_| rng.random_range(-1.0..1.0)).collect() }).collect();
            let refs: Vec<&FeatureSet> = sets.iter().collect();
            let batch = Batch::from_features(&refs, &cfg.phases).map_err(|e| e.to_string())?;
            let targets: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut p = init(&cfg, 7 + k as u64).map_err(|e| e.to_string())?;
            // Non-trivial batchnorm affine parameters and biases.
            for l in &mut p.layers {
                l.b.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
                if let Some(bn) = &mut l.bn {
                    bn.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
                    bn.beta.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
                }
            }
            let seed = 99;
            let (_, grads, _) = loss_and_gradients(&p, &batch, &targets, seed).map_err(|e| e.to_string())?;
            let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
            let h = 1e-5;
            let n_tensors = analytic.len();
            for t in 0..n_tensors {
                for i in 0..analytic[t].len() {
                    let loss_at = |delta: f64| -> Result<f64, String> {
                        let mut q = p.clone();
                        q.tensors_mut()[t].0[i] += delta;
                        Ok(loss_and_gradients(&q, &batch, &targets, seed).map_err(|e| e.to_string())?.0)
                    };
                    let numeric = (loss_at(h)? - loss_at(-h)?) / (2.0 * h);
                    let a = analytic[t][i];
                    let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-5);
                    worst = worst.max(rel);
                    ensure(rel < 1e-4, || format!("{} dropout {dropout}: tensor {t}[{i}] analytic {a} vs numeric {numeric}", act.name()))?;
                }
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("dense, batchnorm, selu/gelu/mish, dropout; worst relative error {worst:.1e} in {:.1?}", start.elapsed()))
}

// 7 ------------------------------------------------------------------------

fn brute_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn brute_var(v: &[f64]) -> f64 {
    let m = brute_mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

fn brute_corr(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (brute_mean(x), brute_mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    sxy / (sxx * syy).sqrt()
}

fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let below = v.iter().filter(|y| *y < x).count() as f64;
            let tied = v.iter().filter(|y| *y == x).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect()
}

fn statistics_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let close = |a: f64, b: f64, tol: f64, what: &str, case: usize| ensure((a - b).abs() <= tol, || format!("case {case} {what}: {a} vs {b}"));
    for case in 0..100 {
        let n = rng.random_range(5..50);
        let mut truth: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut pred: Vec<f64> = truth.iter().map(|t| t + rng.random_range(-0.8..0.8)).collect();
        if case % 4 == 0 {
            truth.iter_mut().for_each(|v| *v = v.round());
            pred.iter_mut().for_each(|v| *v = v.round());
        }
        let m = metrics(&pred, &truth).map_err(|e| e.to_string())?;
        let nf = n as f64;
        let sse: f64 = pred.iter().zip(&truth).map(|(p, t)| (p - t) * (p - t)).sum();
        let mt = brute_mean(&truth);
        let sst: f64 = truth.iter().map(|t| (t - mt) * (t - mt)).sum();
        close(m.mse, sse / nf, 1e-9, "mse", case)?;
        close(m.mae, pred.iter().zip(&truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / nf, 1e-9, "mae", case)?;
        close(m.r2, 1.0 - sse / sst, 1e-9, "r2", case)?;
        close(m.pearson, brute_corr(&pred, &truth), 1e-9, "pearson", case)?;
        close(m.spearman, brute_corr(&brute_ranks(&pred), &brute_ranks(&truth)), 1e-9, "spearman", case)?;

        let a: Vec<f64> = (0..rng.random_range(3..15)).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..rng.random_range(3..15)).map(|_| rng.random_range(0.1..1.3)).collect();
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let (sa, sb) = (brute_var(&a) / na, brute_var(&b) / nb);
        let diff = brute_mean(&a) - brute_mean(&b);
        let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
        let t = diff / (sa + sb).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| e.to_string())?;
        let w = welch_t(&a, &b).map_err(|e| e.to_string())?;
        close(w.t, t, 1e-9, "welch t", case)?;
        close(w.p, 2.0 * dist.cdf(-t.abs()), 1e-6, "welch p", case)?;
        let pooled = (((na - 1.0) * brute_var(&a) + (nb - 1.0) * brute_var(&b)) / (na + nb - 2.0)).sqrt();
        close(cohens_d(&a, &b).map_err(|e| e.to_string())?, diff / pooled, 1e-9, "cohen d", case)?;
        let half = dist.inverse_cdf(0.975) * (sa + sb).sqrt();
        let ci = mean_diff_ci(&a, &b, 0.95).map_err(|e| e.to_string())?;
        close(ci[0], diff - half, 1e-9, "ci low", case)?;
        close(ci[1], diff + half, 1e-9, "ci high", case)?;
    }
    Ok("100 pairs match brute force (1e-9; p within 1e-6)".into())
}

// 8 ------------------------------------------------------------------------

fn poretopo(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_poretopo")).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("poretopo {} failed: {}", args[0], String::from_utf8_lossy(&out.stderr)))
}

fn csv_column(text: &str, name: &str) -> Result<Vec<Option<f64>>, String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty csv")?.split(',').collect();
    let col = header.iter().position(|h| *h == name).ok_or_else(|| format!("no column {name}"))?;
    Ok(lines.map(|l| l.split(',').nth(col).and_then(|v| v.parse().ok())).collect())
}

fn end_to_end() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let p = |name: &str| root.join(name).to_str().expect("utf-8 path").to_string();
    // 130 training samples give a handful of steps per epoch, so the
    // desk-scale run waits 20 epochs for a validation improvement.
    fs::write(root.join("config.json"), r#"{"seed": 0, "train": {"patience": 20}}"#).map_err(|e| e.to_string())?;
    let cfg = p("config.json");
    poretopo(&["generate", "--out", &p("grids"), "--n", "200", "--dims", "64", "--config", &cfg])?;
    poretopo(&["characterize", "--in", &p("grids"), "--out", &p("descriptors.csv"), "--config", &cfg])?;
    poretopo(&["featurize", "--in", &p("grids"), "--out", &p("features"), "--config", &cfg])?;

    let mut summary = Vec::new();
    let mut any_ok = false;
    for target in ["d_ni", "tau_pore"] {
        let models = p(&format!("models_{target}"));
        let report = p(&format!("report_{target}"));
        let common = ["--features", &p("features"), "--descriptors", &p("descriptors.csv"), "--config", &cfg];
        poretopo(&[&["train", "--target", target, "--runs", "3", "--out", &models][..], &common].concat())?;
        poretopo(&[&["evaluate", "--models", &models, "--out", &report][..], &common].concat())?;
        let js: serde_json::Value =
            serde_json::from_slice(&fs::read(Path::new(&report).join("metrics.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let r2 = js["summary"]["mean"]["r2"].as_f64().unwrap_or(f64::NAN);
        let r = js["summary"]["mean"]["pearson"].as_f64().unwrap_or(f64::NAN);
        any_ok |= r2 >= 0.5 && r >= 0.7;
        summary.push(format!("{target} R² {r2:.3} r {r:.3}"));
    }
    let text = fs::read_to_string(root.join("descriptors.csv")).map_err(|e| e.to_string())?;
    let (total, active) = (csv_column(&text, "l_tpb")?, csv_column(&text, "l_tpb_active")?);
    let (x, y): (Vec<f64>, Vec<f64>) = total.iter().zip(&active).filter_map(|(a, b)| Some(((*a)?, (*b)?))).unzip();
    ensure(x.len() == 200, || format!("{} descriptor rows", x.len()))?;
    let r_tpb = brute_corr(&x, &y);
    summary.push(format!("r(l_tpb, l_tpb_active) {r_tpb:.3}"));
    let elapsed = start.elapsed();
    summary.push(format!("{:.1} min", elapsed.as_secs_f64() / 60.0));
    let line = summary.join(", ");
    ensure(any_ok, || format!("neither target reaches R² ≥ 0.5 and r ≥ 0.7: {line}"))?;
    ensure(r_tpb > 0.5, || format!("TPB correlation too weak: {line}"))?;
    within(elapsed, Duration::from_secs(3600)).map_err(|e| format!("{e}: {line}"))?;
    Ok(line)
}

// 9 ------------------------------------------------------------------------

fn hpo_sanity() -> Check {
    let space = SearchSpace::new(vec![("x", Dimension::Uniform { lo: -2.0, hi: 2.0 })]).map_err(|e| e.to_string())?;
    let f = |a: &Assignment| (a["x"].as_f64().expect("float") - 0.3).powi(2);
    let record = |number: usize, params: Assignment, v: f64| TrialRecord { number, phase: 1, params, objective: Some(v), status: TrialStatus::Complete, duration_s: 0.0 };
    let settings = TpeSettings::default();
    let (mut hits, mut tpe_best, mut rand_best) = (0, Vec::new(), Vec::new());
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hist: Vec<TrialRecord> = Vec::new();
        for i in 0..50 {
            let a = tpe_suggest(&hist, &space, &settings, &mut rng);
            let v = f(&a);
            hist.push(record(i, a, v));
        }
        let best = hist.iter().min_by(|a, b| a.objective.unwrap().total_cmp(&b.objective.unwrap())).expect("50 trials");
        if (best.params["x"].as_f64().expect("float") - 0.3).abs() <= 0.05 {
            hits += 1;
        }
        tpe_best.push(best.objective.unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand_best.push((0..50).map(|_| f(&sample_random(&space, &mut rng))).fold(f64::INFINITY, f64::min));
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        (v[4] + v[5]) / 2.0
    };
    let (mt, mr) = (median(&mut tpe_best), median(&mut rand_best));
    ensure(hits >= 9, || format!("{hits}/10 seeds within 0.05"))?;
    ensure(mt <= mr, || format!("TPE median {mt:.2e} > random median {mr:.2e}"))?;
    Ok(format!("{hits}/10 within 0.05; median best TPE {mt:.2e} vs random {mr:.2e}"))
}

// 10 -----------------------------------------------------------------------

fn ablation_mechanics() -> Check {
    for drop in PhaseLabel::ALL {
        let phases: Vec<PhaseLabel> = PhaseLabel::ALL.into_iter().filter(|p| *p != drop).collect();
        let cfg = NindenConfig { phases: phases.clone(), input_size: 4, ..Default::default() };
        ensure(cfg.channels() == 6, || format!("without {drop}: {} channels", cfg.channels()))?;
        let set = FeatureSet { resolution: 2, values: vec![0.5; 36] };
        let batch = Batch::from_features(&[&set, &set], &phases).map_err(|e| e.to_string())?;
        ensure(batch.channels.len() == 6, || format!("without {drop}: batch has {} channels", batch.channels.len()))?;
    }

    // Constructed groups of 5 with unit sd: a shift of δ gives t = δ / √(2/5)
    // on 8 degrees of freedom, so the shift hitting p exactly is known.
    let dist = StudentsT::new(0.0, 1.0, 8.0).map_err(|e| e.to_string())?;
    let base = [-1.2649110640673518, -0.6324555320336759, 0.0, 0.6324555320336759, 1.2649110640673518];
    ensure((brute_var(&base) - 1.0).abs() < 1e-12, || "base group must have unit variance".into())?;
    let mut seen = Vec::new();
    for (alpha, at, above) in [(0.01, Tier::One, Tier::Five), (0.05, Tier::Five, Tier::Ten), (0.10, Tier::Ten, Tier::None)] {
        let delta = dist.inverse_cdf(1.0 - alpha / 2.0) * (2.0f64 / 5.0).sqrt();
        for (scale, expect) in [(1.0 + 1e-6, at), (1.0 - 1e-6, above)] {
            let variant: Vec<f64> = base.iter().map(|v| v + delta * scale).collect();
            let c = compare("mse", &base, &variant).map_err(|e| e.to_string())?;
            ensure(c.tier == expect, || format!("p = {} at threshold {alpha}: tier {:?}, expected {expect:?}", c.p, c.tier))?;
            seen.push(c.tier.stars());
        }
        ensure(Tier::from_p(alpha) == at, || format!("p = {alpha} exactly must fall in its tier"))?;
    }
    ensure(seen == ["***", "**", "**", "*", "*", ""], || format!("stars {seen:?}"))?;

    // The CLI completes an ablation on a tiny dataset.
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let p = |name: &str| root.join(name).to_str().expect("utf-8 path").to_string();
    let cfg = root.join("config.json");
    fs::write(
        &cfg,
        r#"{"seed": 5, "train": {"max_epochs": 3},
            "model": {"pi_branch_widths": [8, 4], "phase_branch_widths": [8, 4], "head_widths": [8, 4, 2], "encoding_length": 4}}"#,
    )
    .map_err(|e| e.to_string())?;
    poretopo(&["generate", "--out", &p("grids"), "--n", "20", "--dims", "14", "--seed", "5"])?;
    poretopo(&["characterize", "--in", &p("grids"), "--out", &p("d.csv")])?;
    poretopo(&["featurize", "--in", &p("grids"), "--out", &p("f"), "--res", "6", "--seed", "5"])?;
    poretopo(&[
        "ablate", "--features", &p("f"), "--descriptors", &p("d.csv"), "--target", "l_tpb", "--runs", "3", "--config",
        &p("config.json"), "--out", &p("abl"),
    ])?;
    let text = fs::read_to_string(root.join("abl/ablation.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<&str> = text.lines().skip(1).collect();
    ensure(rows.len() == 15, || format!("{} ablation rows", rows.len()))?;
    for phase in ["ni", "ysz", "pore"] {
        ensure(rows.iter().filter(|r| r.starts_with(&format!("without_{phase},"))).count() == 5, || format!("missing rows for {phase}"))?;
    }
    let sig: Vec<&str> = rows.iter().map(|r| r.rsplit(',').next().unwrap_or("?")).collect();
    ensure(sig.iter().all(|s| ["", "*", "**", "***"].contains(s)), || format!("significance column {sig:?}"))?;
    Ok("6 channels for every dropped phase; tiers flip exactly at 0.01/0.05/0.10; CLI ablation completes".into())
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("persistence oracle equivalence", persistence_oracle),
        ("known-topology suite", known_topology),
        ("persistence-image quadrature", image_quadrature),
        ("tortuosity", tortuosity),
        ("TPB fixture", tpb_fixture),
        ("gradient checks", gradient_checks),
        ("statistics oracle", statistics_oracle),
        ("desk-scale end-to-end", end_to_end),
        ("HPO sanity", hpo_sanity),
        ("ablation mechanics", ablation_mechanics),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
