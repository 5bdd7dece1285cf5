//! Target preprocessing and dataset splitting.
//!
//! Targets pass through Yeo-Johnson, z-scoring and min-max scaling, all
//! fitted on the training split only. Out-of-range values are not clamped.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Yeo-Johnson power transform.
pub fn yeo_johnson(y: f64, lambda: f64) -> f64 {
    if y >= 0.0 {
        if lambda.abs() < 1e-12 {
            y.ln_1p()
        } else {
            ((y + 1.0).powf(lambda) - 1.0) / lambda
        }
    } else if (lambda - 2.0).abs() < 1e-12 {
        -(-y).ln_1p()
    } else {
        -((1.0 - y).powf(2.0 - lambda) - 1.0) / (2.0 - lambda)
    }
}

/// Inverse of [`yeo_johnson`] for the same `lambda`.
pub fn yeo_johnson_inverse(x: f64, lambda: f64) -> f64 {
    if x >= 0.0 {
        if lambda.abs() < 1e-12 {
            x.exp_m1()
        } else {
            (lambda * x + 1.0).powf(1.0 / lambda) - 1.0
        }
    } else if (lambda - 2.0).abs() < 1e-12 {
        -(-x).exp_m1()
    } else {
        1.0 - (1.0 - (2.0 - lambda) * x).powf(1.0 / (2.0 - lambda))
    }
}

/// Gaussian profile log-likelihood of the transformed sample, including the
/// Jacobian term.
pub fn yeo_johnson_log_likelihood(values: &[f64], lambda: f64) -> f64 {
    let n = values.len() as f64;
    let t: Vec<f64> = values.iter().map(|&y| yeo_johnson(y, lambda)).collect();
    let mean = t.iter().sum::<f64>() / n;
    let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let jac: f64 = values.iter().map(|&y| y.signum() * y.abs().ln_1p()).sum();
    -0.5 * n * var.ln() + (lambda - 1.0) * jac
}

pub const LAMBDA_BOUNDS: [f64; 2] = [-5.0, 5.0];
const LAMBDA_TOL: f64 = 1e-4;

/// Maximum-likelihood λ by golden-section search over [`LAMBDA_BOUNDS`].
pub fn fit_lambda(values: &[f64]) -> Result<f64> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::FitFailed("non-finite value".into()));
    }
    let mut distinct = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::FitFailed(format!("need at least 3 distinct values, got {}", distinct.len())));
    }
    let f = |l: f64| {
        let v = yeo_johnson_log_likelihood(values, l);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let [mut a, mut b] = LAMBDA_BOUNDS;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > LAMBDA_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    let lambda = 0.5 * (a + b);
    if !f(lambda).is_finite() {
        return Err(Error::FitFailed("likelihood is not finite".into()));
    }
    Ok(lambda)
}

/// Fitted Yeo-Johnson → z-score → min-max pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub lambda: f64,
    pub mean: f64,
    pub std: f64,
    pub lo: f64,
    pub hi: f64,
}

impl TransformParams {
    pub fn apply(&self, v: f64) -> f64 {
        let z = (yeo_johnson(v, self.lambda) - self.mean) / self.std;
        (z - self.lo) / (self.hi - self.lo)
    }

    pub fn inverse(&self, s: f64) -> f64 {
        let z = s * (self.hi - self.lo) + self.lo;
        yeo_johnson_inverse(z * self.std + self.mean, self.lambda)
    }
}

/// Fits the pipeline on training values; population standard deviation.
pub fn fit_transform(train: &[f64]) -> Result<TransformParams> {
    let lambda = fit_lambda(train)?;
    let t: Vec<f64> = train.iter().map(|&y| yeo_johnson(y, lambda)).collect();
    let n = t.len() as f64;
    let mean = t.iter().sum::<f64>() / n;
    let std = (t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::FitFailed("zero spread after transform".into()));
    }
    let z = t.iter().map(|v| (v - mean) / std);
    let lo = z.clone().fold(f64::INFINITY, f64::min);
    let hi = z.fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::FitFailed("zero range after standardization".into()));
    }
    Ok(TransformParams { lambda, mean, std, lo, hi })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.65, 0.15, 0.20);

/// Seeded shuffle, then floor(f_train·n), floor(f_val·n) and the remainder.
pub fn split(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<SplitIndex> {
    if n < 3 {
        return Err(invalid(format!("cannot split {n} samples three ways")));
    }
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // The epsilon keeps exact products such as 0.65·20 from rounding down.
    let n_train = (ft * n as f64 + 1e-9).floor() as usize;
    let n_val = (fv * n as f64 + 1e-9).floor() as usize;
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok(SplitIndex { train: idx, val, test })
}
