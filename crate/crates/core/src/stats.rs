//! Regression metrics and two-sample comparisons for ablations.
//!
//! Comparisons are oriented `a` minus `b`; ablations pass the variant as `a`
//! and the full model as `b`, so Δμ, t and d share one sign.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn undefined(msg: impl Into<String>) -> Error {
    Error::UndefinedMetric(msg.into())
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(undefined(format!("need equal nonzero lengths, got {} and {}", pred.len(), truth.len())));
    }
    Ok(())
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(undefined("correlation of a constant vector"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub r2: f64,
    pub pearson: f64,
    pub spearman: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 5] = ["mse", "mae", "r2", "pearson", "spearman"];

    pub fn values(&self) -> [f64; 5] {
        [self.mse, self.mae, self.r2, self.pearson, self.spearman]
    }
}

/// Constant truth is an error. Constant predictions leave the correlations
/// NaN while MSE, MAE and R² stay defined.
pub fn metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics> {
    check_pair(pred, truth)?;
    let n = pred.len() as f64;
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    let mae = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let mt = mean(truth);
    let sst = truth.iter().map(|t| (t - mt).powi(2)).sum::<f64>();
    if sst == 0.0 {
        return Err(undefined("constant truth"));
    }
    let r2 = 1.0 - mse * n / sst;
    let constant_pred = pred.iter().all(|p| *p == pred[0]);
    let (r, rho) = if constant_pred {
        (f64::NAN, f64::NAN)
    } else {
        (pearson(pred, truth)?, spearman(pred, truth)?)
    };
    Ok(Metrics { mse, mae, r2, pearson: r, spearman: rho })
}

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
pub fn incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * x.ln() + b * (1.0 - x).ln();
    // The fraction converges fast only below the mean; use the symmetry otherwise.
    if x > (a + 1.0) / (a + b + 2.0) {
        return 1.0 - incomplete_beta(1.0 - x, b, a);
    }
    const TINY: f64 = 1e-300;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut f = d;
    for m in 1..=10_000 {
        let m = m as f64;
        for num in [
            m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m)),
            -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0)),
        ] {
            d = 1.0 + num * d;
            if d.abs() < TINY {
                d = TINY;
            }
            c = 1.0 + num / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            f *= c * d;
        }
        if (c * d - 1.0).abs() < 1e-16 {
            break;
        }
    }
    ln_front.exp() * f / a
}

pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * incomplete_beta(df / (df + t * t), df / 2.0, 0.5);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Inverse of [`student_t_cdf`] by bisection.
pub fn student_t_quantile(q: f64, df: f64) -> f64 {
    if q == 0.5 {
        return 0.0;
    }
    if q < 0.5 {
        return -student_t_quantile(1.0 - q, df);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while student_t_cdf(hi, df) < q {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if student_t_cdf(mid, df) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

fn welch_parts(a: &[f64], b: &[f64]) -> Result<(f64, f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(undefined("each sample needs at least 2 values"));
    }
    let (va, vb) = (variance(a) / a.len() as f64, variance(b) / b.len() as f64);
    let se2 = va + vb;
    if !(se2 > 0.0) {
        return Err(undefined("both samples have zero variance"));
    }
    let df = se2 * se2 / (va * va / (a.len() as f64 - 1.0) + vb * vb / (b.len() as f64 - 1.0));
    Ok((mean(a) - mean(b), se2.sqrt(), df))
}

pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    let (diff, se, df) = welch_parts(a, b)?;
    let t = diff / se;
    let p = incomplete_beta(df / (df + t * t), df / 2.0, 0.5).clamp(0.0, 1.0);
    Ok(WelchResult { t, df, p })
}

/// Standardized by the pooled standard deviation.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(undefined("each sample needs at least 2 values"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = ((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / (na + nb - 2.0);
    if !(pooled > 0.0) {
        return Err(undefined("zero pooled variance"));
    }
    Ok((mean(a) - mean(b)) / pooled.sqrt())
}

/// Welch interval for mean(a) − mean(b).
pub fn mean_diff_ci(a: &[f64], b: &[f64], level: f64) -> Result<[f64; 2]> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level {level} outside (0, 1)")));
    }
    let (diff, se, df) = welch_parts(a, b)?;
    let half = student_t_quantile(0.5 + level / 2.0, df) * se;
    Ok([diff - half, diff + half])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    None,
    /// p ≤ 0.10
    Ten,
    /// p ≤ 0.05
    Five,
    /// p ≤ 0.01
    One,
}

impl Tier {
    /// The strictest level met; thresholds are inclusive.
    pub fn from_p(p: f64) -> Tier {
        if p <= 0.01 {
            Tier::One
        } else if p <= 0.05 {
            Tier::Five
        } else if p <= 0.10 {
            Tier::Ten
        } else {
            Tier::None
        }
    }

    pub fn stars(self) -> &'static str {
        match self {
            Tier::None => "",
            Tier::Ten => "*",
            Tier::Five => "**",
            Tier::One => "***",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub p: f64,
    pub tier: Tier,
    /// variant − full
    pub delta_mu: f64,
    pub d: f64,
    pub ci95: [f64; 2],
}

pub fn compare(metric: &str, full: &[f64], variant: &[f64]) -> Result<Comparison> {
    let w = welch_t(variant, full)?;
    Ok(Comparison {
        metric: metric.to_string(),
        p: w.p,
        tier: Tier::from_p(w.p),
        delta_mu: mean(variant) - mean(full),
        d: cohens_d(variant, full)?,
        ci95: mean_diff_ci(variant, full, 0.95)?,
    })
}

/// One comparison per metric across independent runs.
pub fn ablation_compare(full: &[Metrics], variant: &[Metrics]) -> Result<Vec<Comparison>> {
    if full.len() < 2 || variant.len() < 2 {
        return Err(undefined("need at least 2 runs per group"));
    }
    (0..5)
        .map(|m| {
            let f: Vec<f64> = full.iter().map(|r| r.values()[m]).collect();
            let v: Vec<f64> = variant.iter().map(|r| r.values()[m]).collect();
            compare(Metrics::NAMES[m], &f, &v)
        })
        .collect()
}

/// Mean and sample standard deviation per metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub runs: usize,
    pub mean: Metrics,
    pub std: Metrics,
}

pub fn summarize(runs: &[Metrics]) -> Result<MetricsSummary> {
    if runs.is_empty() {
        return Err(undefined("no runs"));
    }
    let pick = |f: &dyn Fn(&[f64]) -> f64| {
        let v: Vec<[f64; 5]> = runs.iter().map(|r| r.values()).collect();
        let col = |m: usize| f(&v.iter().map(|r| r[m]).collect::<Vec<_>>());
        Metrics { mse: col(0), mae: col(1), r2: col(2), pearson: col(3), spearman: col(4) }
    };
    let std = |v: &[f64]| if v.len() < 2 { 0.0 } else { variance(v).sqrt() };
    Ok(MetricsSummary { runs: runs.len(), mean: pick(&mean), std: pick(&std) })
}
