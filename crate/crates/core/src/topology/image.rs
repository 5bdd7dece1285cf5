//! Persistence surfaces and images in the birth–persistence plane.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::topology::persistence::PersistenceDiagram;

/// Kernel and weighting parameters shared by all channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PiParams {
    /// Weight scale in arctan(C·p^γ).
    pub c: f64,
    /// Weight exponent, a positive integer.
    pub gamma: u32,
    /// Gaussian standard deviation on both axes, in diagram units.
    pub sigma: f64,
    pub resolution: usize,
}

impl Default for PiParams {
    fn default() -> Self {
        Self { c: 10.0, gamma: 1, sigma: 0.02, resolution: 32 }
    }
}

impl PiParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(invalid(format!("C must be positive, got {}", self.c)));
        }
        if self.gamma < 1 {
            return Err(invalid("gamma must be a positive integer"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.resolution < 1 {
            return Err(invalid("resolution must be at least 1"));
        }
        Ok(())
    }
}

/// Birth and persistence intervals covered by one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub birth: [f64; 2],
    pub pers: [f64; 2],
}

impl Default for ChannelRange {
    fn default() -> Self {
        Self { birth: [0.0, 1.0], pers: [0.0, 1.0] }
    }
}

impl ChannelRange {
    pub fn validate(&self) -> Result<()> {
        for r in [self.birth, self.pers] {
            if !(r[0].is_finite() && r[1].is_finite() && r[1] > r[0]) {
                return Err(invalid(format!("degenerate image range {r:?}")));
            }
        }
        Ok(())
    }

    /// [min − 2σ, max + 2σ] of births and persistences over all pairs of
    /// `diagrams`; the unit square if there are none.
    pub fn fit<'a>(diagrams: impl IntoIterator<Item = &'a PersistenceDiagram>, sigma: f64) -> Self {
        let mut b = [f64::INFINITY, f64::NEG_INFINITY];
        let mut p = [f64::INFINITY, f64::NEG_INFINITY];
        for d in diagrams {
            for pair in &d.pairs {
                b = [b[0].min(pair.birth), b[1].max(pair.birth)];
                let q = pair.persistence();
                p = [p[0].min(q), p[1].max(q)];
            }
        }
        if !b[0].is_finite() {
            return Self::default();
        }
        Self { birth: [b[0] - 2.0 * sigma, b[1] + 2.0 * sigma], pers: [p[0] - 2.0 * sigma, p[1] + 2.0 * sigma] }
    }
}

/// arctan(C·p^γ); independent of the birth.
pub fn weight(_b: f64, p: f64, c: f64, gamma: u32) -> f64 {
    (c * p.powi(gamma as i32)).atan()
}

/// Weighted sum of isotropic Gaussians centred on (birth, persistence).
pub fn surface_value(d: &PersistenceDiagram, x: f64, y: f64, params: &PiParams) -> f64 {
    let s2 = params.sigma * params.sigma;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * s2);
    d.pairs
        .iter()
        .map(|pair| {
            let (b, p) = (pair.birth, pair.persistence());
            let r2 = (x - b).powi(2) + (y - p).powi(2);
            weight(b, p, params.c, params.gamma) * norm * (-r2 / (2.0 * s2)).exp()
        })
        .sum()
}

/// Pixel raster, row-major with rows along persistence and columns along
/// birth; row 0 holds the lowest persistence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceImage {
    pub resolution: usize,
    pub values: Vec<f64>,
}

impl PersistenceImage {
    pub fn zeros(resolution: usize) -> Self {
        Self { resolution, values: vec![0.0; resolution * resolution] }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.resolution + col]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

fn normal_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t / std::f64::consts::SQRT_2)
}

/// Gaussian beyond this many standard deviations contributes below 1e-15.
const SUPPORT_SIGMAS: f64 = 8.5;

/// Mass of N(mu, sigma²) in each of `res` equal cells of `range`, written to
/// `out`; returns the first and one-past-last touched cells.
fn axis_masses(mu: f64, sigma: f64, range: [f64; 2], res: usize, out: &mut [f64]) -> (usize, usize) {
    let w = (range[1] - range[0]) / res as f64;
    let first = (((mu - SUPPORT_SIGMAS * sigma - range[0]) / w).floor().max(0.0) as usize).min(res);
    let last = (((mu + SUPPORT_SIGMAS * sigma - range[0]) / w).ceil().max(0.0) as usize).min(res);
    if first >= last {
        return (0, 0);
    }
    let edge = |i: usize| if i == res { range[1] } else { range[0] + i as f64 * w };
    let mut lo = normal_cdf((edge(first) - mu) / sigma);
    for i in first..last {
        let hi = normal_cdf((edge(i + 1) - mu) / sigma);
        out[i] = hi - lo;
        lo = hi;
    }
    (first, last)
}

/// Each pixel is the exact integral of the persistence surface over its
/// cell: per pair, the weight times the product of Gaussian CDF differences
/// along both axes.
pub fn persistence_image(d: &PersistenceDiagram, params: &PiParams, range: &ChannelRange) -> PersistenceImage {
    let res = params.resolution;
    let mut img = PersistenceImage::zeros(res);
    let mut bx = vec![0.0; res];
    let mut py = vec![0.0; res];
    for pair in &d.pairs {
        let (b, p) = (pair.birth, pair.persistence());
        let w = weight(b, p, params.c, params.gamma);
        let (c0, c1) = axis_masses(b, params.sigma, range.birth, res, &mut bx);
        let (r0, r1) = axis_masses(p, params.sigma, range.pers, res, &mut py);
        for r in r0..r1 {
            let row = &mut img.values[r * res..(r + 1) * res];
            let f = w * py[r];
            for c in c0..c1 {
                row[c] += f * bx[c];
            }
        }
    }
    img
}
