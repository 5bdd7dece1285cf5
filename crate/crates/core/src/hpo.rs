//! Two-phase hyperparameter search: random search, then a Tree-structured
//! Parzen Estimator over a narrowed space.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dimension {
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    Integer { lo: i64, hi: i64 },
    Categorical { options: Vec<String> },
}

impl Dimension {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            Dimension::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            Dimension::LogUniform { lo, hi } => hi.is_finite() && *lo > 0.0 && lo < hi,
            Dimension::Integer { lo, hi } => lo < hi,
            Dimension::Categorical { options } => !options.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("bad search dimension {name}: {self:?}")))
        }
    }

    /// Continuous working interval: log scale for log-uniform, half-open
    /// cells around integers.
    fn interval(&self) -> Option<(f64, f64)> {
        match self {
            Dimension::Uniform { lo, hi } => Some((*lo, *hi)),
            Dimension::LogUniform { lo, hi } => Some((lo.ln(), hi.ln())),
            Dimension::Integer { lo, hi } => Some((*lo as f64 - 0.5, *hi as f64 + 0.5)),
            Dimension::Categorical { .. } => None,
        }
    }

    fn to_internal(&self, v: &ParamValue) -> Option<f64> {
        match (self, v) {
            (Dimension::Uniform { .. }, ParamValue::Float(x)) => Some(*x),
            (Dimension::LogUniform { .. }, ParamValue::Float(x)) => Some(x.ln()),
            (Dimension::Integer { .. }, ParamValue::Int(i)) => Some(*i as f64),
            _ => None,
        }
    }

    fn from_internal(&self, x: f64) -> ParamValue {
        match self {
            Dimension::Uniform { lo, hi } => ParamValue::Float(x.clamp(*lo, *hi)),
            Dimension::LogUniform { lo, hi } => ParamValue::Float(x.exp().clamp(*lo, *hi)),
            Dimension::Integer { lo, hi } => ParamValue::Int((x.round() as i64).clamp(*lo, *hi)),
            Dimension::Categorical { .. } => unreachable!("categorical has no internal scale"),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> ParamValue {
        match self {
            Dimension::Uniform { lo, hi } => ParamValue::Float(rng.random_range(*lo..*hi)),
            Dimension::LogUniform { lo, hi } => ParamValue::Float(rng.random_range(lo.ln()..hi.ln()).exp()),
            Dimension::Integer { lo, hi } => ParamValue::Int(rng.random_range(*lo..=*hi)),
            Dimension::Categorical { options } => ParamValue::Cat(options[rng.random_range(0..options.len())].clone()),
        }
    }

    pub fn contains(&self, v: &ParamValue) -> bool {
        match (self, v) {
            (Dimension::Uniform { lo, hi } | Dimension::LogUniform { lo, hi }, ParamValue::Float(x)) => (*lo..=*hi).contains(x),
            (Dimension::Integer { lo, hi }, ParamValue::Int(i)) => (*lo..=*hi).contains(i),
            (Dimension::Categorical { options }, ParamValue::Cat(s)) => options.contains(s),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Cat(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Float(x) => Some(*x),
            ParamValue::Int(i) => Some(*i as f64),
            ParamValue::Cat(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ParamValue::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Cat(s) => Some(s),
            _ => None,
        }
    }
}

pub type Assignment = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<(String, Dimension)>,
}

impl SearchSpace {
    pub fn new(dims: Vec<(&str, Dimension)>) -> Result<Self> {
        let s = SearchSpace { dims: dims.into_iter().map(|(n, d)| (n.to_string(), d)).collect() };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, (name, d)) in self.dims.iter().enumerate() {
            d.validate(name)?;
            if self.dims[..i].iter().any(|(n, _)| n == name) {
                return Err(invalid(format!("duplicate dimension {name}")));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Dimension> {
        self.dims.iter().find(|(n, _)| n == name).map(|(_, d)| d)
    }

    pub fn contains(&self, a: &Assignment) -> bool {
        self.dims.iter().all(|(n, d)| a.get(n).is_some_and(|v| d.contains(v)))
    }
}

/// Independent draws per dimension.
pub fn sample_random<R: Rng>(space: &SearchSpace, rng: &mut R) -> Assignment {
    space.dims.iter().map(|(n, d)| (n.clone(), d.sample(rng))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub number: usize,
    pub phase: u8,
    pub params: Assignment,
    pub objective: Option<f64>,
    pub status: TrialStatus,
    pub duration_s: f64,
}

impl TrialRecord {
    pub fn completed_value(&self) -> Option<f64> {
        match (self.status, self.objective) {
            (TrialStatus::Complete, Some(v)) if v.is_finite() => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpeSettings {
    pub n_startup: usize,
    pub gamma: f64,
    pub n_candidates: usize,
}

impl Default for TpeSettings {
    fn default() -> Self {
        TpeSettings { n_startup: 10, gamma: 0.25, n_candidates: 24 }
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Equal-weight mixture of Gaussians truncated to [lo, hi].
struct Parzen {
    centers: Vec<f64>,
    bandwidth: f64,
    lo: f64,
    hi: f64,
}

impl Parzen {
    fn new(centers: Vec<f64>, lo: f64, hi: f64) -> Self {
        let span = hi - lo;
        let bandwidth = (span / (centers.len() as f64).sqrt()).max(0.01 * span);
        Parzen { centers, bandwidth, lo, hi }
    }

    fn pdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let total: f64 = self
            .centers
            .iter()
            .map(|&mu| {
                let mass = normal_cdf((self.hi - mu) / h) - normal_cdf((self.lo - mu) / h);
                let z = (x - mu) / h;
                (-0.5 * z * z).exp() / (h * (2.0 * std::f64::consts::PI).sqrt() * mass)
            })
            .sum();
        total / self.centers.len() as f64
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let mu = self.centers[rng.random_range(0..self.centers.len())];
        for _ in 0..1000 {
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
            let x = mu + self.bandwidth * z;
            if (self.lo..=self.hi).contains(&x) {
                return x;
            }
        }
        mu.clamp(self.lo, self.hi)
    }
}

fn categorical_probs(options: &[String], seen: &[&str]) -> Vec<f64> {
    let denom = (seen.len() + options.len()) as f64;
    options.iter().map(|o| (seen.iter().filter(|s| *s == o).count() + 1) as f64 / denom).collect()
}

/// Random below `n_startup` completed trials; otherwise the best of
/// `n_candidates` draws from the good-set density by l(x)/g(x).
pub fn tpe_suggest<R: Rng>(history: &[TrialRecord], space: &SearchSpace, settings: &TpeSettings, rng: &mut R) -> Assignment {
    let mut done: Vec<(&Assignment, f64)> = history
        .iter()
        .filter(|t| space.contains(&t.params))
        .filter_map(|t| t.completed_value().map(|v| (&t.params, v)))
        .collect();
    if done.len() < settings.n_startup.max(2) {
        return sample_random(space, rng);
    }
    done.sort_by(|a, b| a.1.total_cmp(&b.1));
    let n_good = ((settings.gamma * done.len() as f64).ceil() as usize).clamp(1, done.len() - 1);
    let (good, bad) = done.split_at(n_good);

    let mut candidates: Vec<Assignment> = vec![Assignment::new(); settings.n_candidates.max(1)];
    let mut scores = vec![0.0; candidates.len()];
    for (name, dim) in &space.dims {
        match dim {
            Dimension::Categorical { options } => {
                let values = |set: &[(&Assignment, f64)]| -> Vec<f64> {
                    let seen: Vec<&str> = set.iter().filter_map(|(a, _)| a[name].as_str()).collect();
                    categorical_probs(options, &seen)
                };
                let (pl, pg) = (values(good), values(bad));
                for (c, score) in candidates.iter_mut().zip(&mut scores) {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut k = options.len() - 1;
                    for (i, p) in pl.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            k = i;
                            break;
                        }
                    }
                    c.insert(name.clone(), ParamValue::Cat(options[k].clone()));
                    *score += pl[k].ln() - pg[k].ln();
                }
            }
            _ => {
                let (lo, hi) = dim.interval().expect("numeric dimension");
                let centers = |set: &[(&Assignment, f64)]| set.iter().filter_map(|(a, _)| dim.to_internal(&a[name])).collect();
                let (l, g) = (Parzen::new(centers(good), lo, hi), Parzen::new(centers(bad), lo, hi));
                for (c, score) in candidates.iter_mut().zip(&mut scores) {
                    let x = l.sample(rng);
                    let v = dim.from_internal(x);
                    let xi = dim.to_internal(&v).expect("same dimension");
                    *score += l.pdf(xi).ln() - g.pdf(xi).ln();
                    c.insert(name.clone(), v);
                }
            }
        }
    }
    let best = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("at least one candidate");
    candidates.swap_remove(best)
}

/// Narrows numeric dimensions of `space` that phase-1 also searched to the
/// hull of the best `gamma` fraction of phase-1 values.
pub fn narrow(space: &SearchSpace, phase1: &[TrialRecord], gamma: f64) -> SearchSpace {
    let mut done: Vec<(&Assignment, f64)> = phase1.iter().filter_map(|t| t.completed_value().map(|v| (&t.params, v))).collect();
    done.sort_by(|a, b| a.1.total_cmp(&b.1));
    let top = &done[..((gamma * done.len() as f64).ceil() as usize).min(done.len())];
    let dims = space
        .dims
        .iter()
        .map(|(name, d)| {
            let vals: Vec<f64> = top.iter().filter_map(|(a, _)| a.get(name).and_then(|v| v.as_f64())).collect();
            if vals.len() < 2 {
                return (name.clone(), d.clone());
            }
            let vlo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let vhi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let narrowed = match d {
                Dimension::Uniform { lo, hi } => Dimension::Uniform { lo: vlo.max(*lo), hi: vhi.min(*hi) },
                Dimension::LogUniform { lo, hi } => Dimension::LogUniform { lo: vlo.max(*lo), hi: vhi.min(*hi) },
                Dimension::Integer { lo, hi } => Dimension::Integer { lo: (vlo as i64).max(*lo), hi: (vhi as i64).min(*hi) },
                Dimension::Categorical { .. } => d.clone(),
            };
            if narrowed.validate(name).is_ok() {
                (name.clone(), narrowed)
            } else {
                (name.clone(), d.clone())
            }
        })
        .collect();
    SearchSpace { dims }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HpoResult {
    pub best: Assignment,
    pub best_objective: f64,
    pub trials: Vec<TrialRecord>,
    /// Phase-2 space after narrowing.
    pub space2: SearchSpace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HpoSettings {
    pub n1: usize,
    pub n2: usize,
    pub seed: u64,
    pub tpe: TpeSettings,
}

impl Default for HpoSettings {
    fn default() -> Self {
        HpoSettings { n1: 50, n2: 50, seed: 0, tpe: TpeSettings::default() }
    }
}

fn trial_rng(seed: u64, number: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(number as u64 + 1);
    rng
}

/// Phase 1 samples `space1` at random. Phase 2 runs TPE over the narrowed
/// `space2` with every phase-1-only dimension frozen at the phase-1 best.
/// Trials already in `resume` are replayed, not re-run; new records are
/// appended to `log` as JSON lines.
pub fn run_hpo<F>(
    mut objective: F,
    space1: &SearchSpace,
    space2: &SearchSpace,
    settings: &HpoSettings,
    resume: &[TrialRecord],
    mut log: Option<&mut dyn Write>,
) -> Result<HpoResult>
where
    F: FnMut(&Assignment) -> Result<f64>,
{
    space1.validate()?;
    space2.validate()?;
    let mut trials: Vec<TrialRecord> = Vec::new();
    let mut run = |number: usize, phase: u8, params: Assignment, trials: &mut Vec<TrialRecord>| -> Result<()> {
        let record = match resume.iter().find(|r| r.number == number) {
            Some(r) if r.phase == phase && r.params == params => r.clone(),
            Some(_) => return Err(Error::Format(format!("trial log disagrees with this run at trial {number}"))),
            None => {
                let start = Instant::now();
                let outcome = objective(&params);
                let duration_s = start.elapsed().as_secs_f64();
                let (objective, status) = match outcome {
                    Ok(v) if v.is_finite() => (Some(v), TrialStatus::Complete),
                    _ => (None, TrialStatus::Failed),
                };
                let r = TrialRecord { number, phase, params, objective, status, duration_s };
                if let Some(w) = log.as_deref_mut() {
                    write_trial(&r, w)?;
                }
                r
            }
        };
        trials.push(record);
        Ok(())
    };

    for i in 0..settings.n1 {
        let params = sample_random(space1, &mut trial_rng(settings.seed, i));
        run(i, 1, params, &mut trials)?;
    }
    let best_of = |ts: &[TrialRecord]| -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, t) in ts.iter().enumerate() {
            if let Some(v) = t.completed_value() {
                if best.is_none_or(|(_, b)| v < b) {
                    best = Some((i, v));
                }
            }
        }
        best
    };
    let frozen: Assignment = match best_of(&trials) {
        Some((i, _)) => trials[i].params.iter().filter(|(k, _)| space2.get(k).is_none()).map(|(k, v)| (k.clone(), v.clone())).collect(),
        None if settings.n1 == 0 => Assignment::new(),
        None => return Err(Error::Numeric("every phase-1 trial failed".into())),
    };
    let narrowed = narrow(space2, &trials, settings.tpe.gamma);

    let mut phase2: Vec<TrialRecord> = Vec::new();
    for j in 0..settings.n2 {
        let number = settings.n1 + j;
        let suggestion = tpe_suggest(&phase2, &narrowed, &settings.tpe, &mut trial_rng(settings.seed, number));
        let mut params = frozen.clone();
        params.extend(suggestion);
        let mut one = Vec::new();
        run(number, 2, params, &mut one)?;
        phase2.extend(one.iter().cloned());
        trials.extend(one);
    }
    let (i, best_objective) = best_of(&trials).ok_or_else(|| Error::Numeric("every trial failed".into()))?;
    Ok(HpoResult { best: trials[i].params.clone(), best_objective, trials, space2: narrowed })
}

pub fn write_trial(r: &TrialRecord, w: &mut dyn Write) -> Result<()> {
    serde_json::to_writer(&mut *w, r)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Reads a JSON-lines trial log; a torn final line is ignored.
pub fn read_trials<R: BufRead>(r: R) -> Result<Vec<TrialRecord>> {
    let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
    let mut out = Vec::new();
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(t) => out.push(t),
            Err(_) if Some(i) == last => break,
            Err(e) => return Err(Error::Format(format!("trial log line {}: {e}", i + 1))),
        }
    }
    Ok(out)
}
