//! Tortuosity factor from a steady-state diffusion solve.
//!
//! Finite-volume discretisation on voxel centres: conductance 1 between
//! face-adjacent in-phase voxels, 2 between a boundary voxel and its
//! Dirichlet face (half a voxel away). Concentration is 1 on the inlet face
//! and 0 on the outlet face; every other boundary is no-flux. The system is
//! symmetric positive definite and solved matrix-free with Jacobi-
//! preconditioned conjugate gradients.

use serde::{Deserialize, Serialize};

use crate::descriptors::percolation::{label_components, NO_COMPONENT};
use crate::error::{invalid, Error, Result};
use crate::grid::{Dims, PhaseMask, FACE_OFFSETS};

/// Transport direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    #[default]
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Axis::X),
            1 => Some(Axis::Y),
            2 => Some(Axis::Z),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Some(Axis::X),
            "y" => Some(Axis::Y),
            "z" => Some(Axis::Z),
            _ => None,
        }
    }

    /// The axis this one maps to under [`crate::grid::PhaseGrid::rotate90`]
    /// about `about`.
    pub fn rotated(self, about: usize) -> Axis {
        let i = self.index();
        if i == about {
            return self;
        }
        let (a, b) = ((about + 1) % 3, (about + 2) % 3);
        Axis::from_index(if i == a { b } else { a }).expect("axis index")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TortuositySettings {
    pub axis: Axis,
    /// PCG stops at ‖r‖ ≤ rel_residual · ‖b‖.
    pub rel_residual: f64,
    /// Maximum accepted |Φ_in − Φ_out| / Φ_in.
    pub flux_tol: f64,
    pub max_iterations: usize,
}

impl Default for TortuositySettings {
    fn default() -> Self {
        Self { axis: Axis::Z, rel_residual: 1e-7, flux_tol: 1e-4, max_iterations: 20_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TortuosityResult {
    pub tau: f64,
    /// Effective diffusivity relative to the intrinsic one.
    pub d_eff: f64,
    /// Phase volume fraction.
    pub epsilon: f64,
    pub flux_in: f64,
    pub flux_out: f64,
    pub iterations: usize,
}

/// The linear system over voxels connected to both transport faces.
pub(crate) struct DiffusionSystem {
    dims: Dims,
    axis: usize,
    /// Voxel per unknown.
    voxels: Vec<usize>,
    /// Face-neighbour unknowns of each unknown, `u32::MAX` padded.
    neighbours: Vec<[u32; 6]>,
    diag: Vec<f64>,
    rhs: Vec<f64>,
}

impl DiffusionSystem {
    pub(crate) fn new(mask: &PhaseMask, axis: usize) -> Result<Self> {
        let dims = mask.dims();
        let n = dims.as_array();
        let (comp, count) = label_components(mask);
        let mut touches = vec![(false, false); count];
        for (i, &c) in comp.iter().enumerate() {
            if c == NO_COMPONENT {
                continue;
            }
            let k = dims.coords(i)[axis];
            if k == 0 {
                touches[c as usize].0 = true;
            }
            if k + 1 == n[axis] {
                touches[c as usize].1 = true;
            }
        }
        let mut unknown = vec![u32::MAX; dims.len()];
        let mut voxels = Vec::new();
        for (i, &c) in comp.iter().enumerate() {
            if c != NO_COMPONENT && touches[c as usize] == (true, true) {
                unknown[i] = voxels.len() as u32;
                voxels.push(i);
            }
        }
        if voxels.is_empty() {
            return Err(Error::UndefinedDescriptor(format!(
                "phase does not percolate along axis {axis}"
            )));
        }
        let mut diag = vec![0.0; voxels.len()];
        let mut rhs = vec![0.0; voxels.len()];
        let mut neighbours = vec![[u32::MAX; 6]; voxels.len()];
        for (u, &i) in voxels.iter().enumerate() {
            let c = dims.coords(i);
            let mut k = 0;
            for off in FACE_OFFSETS {
                if let Some(j) = dims.offset(c, off) {
                    if unknown[j] != u32::MAX {
                        diag[u] += 1.0;
                        neighbours[u][k] = unknown[j];
                        k += 1;
                    }
                }
            }
            if c[axis] == 0 {
                diag[u] += 2.0;
                rhs[u] += 2.0;
            }
            if c[axis] + 1 == n[axis] {
                diag[u] += 2.0;
            }
        }
        Ok(Self { dims, axis, voxels, neighbours, diag, rhs })
    }

    pub(crate) fn len(&self) -> usize {
        self.voxels.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (u, nb) in self.neighbours.iter().enumerate() {
            let mut acc = self.diag[u] * x[u];
            for &v in nb {
                if v == u32::MAX {
                    break;
                }
                acc -= x[v as usize];
            }
            y[u] = acc;
        }
    }

    /// Linear profile between the Dirichlet faces.
    fn initial_guess(&self) -> Vec<f64> {
        let len = self.dims.as_array()[self.axis] as f64;
        self.voxels
            .iter()
            .map(|&i| 1.0 - (self.dims.coords(i)[self.axis] as f64 + 0.5) / len)
            .collect()
    }

    /// (Φ_in, Φ_out) in voxel conductance units.
    pub(crate) fn fluxes(&self, c: &[f64]) -> (f64, f64) {
        let n = self.dims.as_array()[self.axis];
        let mut fin = 0.0;
        let mut fout = 0.0;
        for (u, &i) in self.voxels.iter().enumerate() {
            let k = self.dims.coords(i)[self.axis];
            if k == 0 {
                fin += 2.0 * (1.0 - c[u]);
            }
            if k + 1 == n {
                fout += 2.0 * c[u];
            }
        }
        (fin, fout)
    }

    /// Jacobi-preconditioned CG to ‖r‖ ≤ rel · ‖b‖.
    fn solve(&self, rel: f64, max_iterations: usize) -> Result<(Vec<f64>, usize)> {
        let n = self.len();
        let mut x = self.initial_guess();
        let mut r = vec![0.0; n];
        self.apply(&x, &mut r);
        for k in 0..n {
            r[k] = self.rhs[k] - r[k];
        }
        let b_norm = dot(&self.rhs, &self.rhs).sqrt();
        let target = rel * b_norm;
        let mut z: Vec<f64> = r.iter().zip(&self.diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut q = vec![0.0; n];
        for it in 0..max_iterations {
            if dot(&r, &r).sqrt() <= target {
                return Ok((x, it));
            }
            self.apply(&p, &mut q);
            let pq = dot(&p, &q);
            if pq <= 0.0 || !pq.is_finite() {
                return Err(Error::Numeric("conjugate gradient breakdown".into()));
            }
            let alpha = rz / pq;
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * q[k];
            }
            for k in 0..n {
                z[k] = r[k] / self.diag[k];
            }
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for k in 0..n {
                p[k] = z[k] + beta * p[k];
            }
        }
        if dot(&r, &r).sqrt() <= target {
            return Ok((x, max_iterations));
        }
        Err(Error::Numeric(format!(
            "conjugate gradient did not converge in {max_iterations} iterations"
        )))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// τ = ε / D_eff along `settings.axis`, with ε the volume fraction of the
/// whole phase and D_eff = Φ·L / (A·Δc). Dead-end and isolated clusters hold
/// no unknowns but still count toward ε. The voxel pitch cancels out.
pub fn tortuosity_factor(
    mask: &PhaseMask,
    voxel_size: f64,
    settings: &TortuositySettings,
) -> Result<TortuosityResult> {
    if !(voxel_size > 0.0) {
        return Err(invalid("voxel size must be positive"));
    }
    if !(settings.rel_residual > 0.0 && settings.flux_tol > 0.0) {
        return Err(invalid("solver tolerances must be positive"));
    }
    let axis = settings.axis.index();
    let sys = DiffusionSystem::new(mask, axis)?;
    let dims = mask.dims();
    let n = dims.as_array();
    let length = n[axis] as f64;
    let area = dims.len() as f64 / length;
    let epsilon = mask.count() as f64 / dims.len() as f64;

    let mut rel = settings.rel_residual;
    let mut total_iterations = 0;
    for _ in 0..4 {
        let (c, it) = sys.solve(rel, settings.max_iterations)?;
        total_iterations += it;
        let (flux_in, flux_out) = sys.fluxes(&c);
        let mismatch = (flux_in - flux_out).abs() / flux_in;
        if mismatch <= settings.flux_tol {
            let flux = 0.5 * (flux_in + flux_out);
            let d_eff = flux * length / area;
            return Ok(TortuosityResult {
                tau: epsilon / d_eff,
                d_eff,
                epsilon,
                flux_in,
                flux_out,
                iterations: total_iterations,
            });
        }
        rel *= 1e-2;
    }
    Err(Error::Numeric("flux mismatch above tolerance after tightening".into()))
}
