//! Signed distance filtration of a phase mask.

use crate::descriptors::edt::squared_edt;
use crate::grid::{Dims, PhaseMask};

/// Per-voxel filtration value in voxel units.
#[derive(Debug, Clone, PartialEq)]
pub struct FiltrationField {
    dims: Dims,
    values: Vec<f64>,
    /// Set when the mask is empty or full; the field is then constant.
    degenerate: bool,
}

impl FiltrationField {
    /// Wraps raw values, e.g. for tests or externally computed fields.
    pub fn from_values(dims: Dims, values: Vec<f64>) -> crate::Result<Self> {
        if values.len() != dims.len() {
            return Err(crate::error::invalid("filtration length does not match dims"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(crate::error::invalid("filtration values must be finite"));
        }
        Ok(Self { dims, values, degenerate: false })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }
}

/// −EDT to the background on phase voxels, +EDT to the phase elsewhere.
/// An empty or full mask yields the constant ±(grid diagonal) and is flagged.
pub fn signed_distance_filtration(m: &PhaseMask) -> FiltrationField {
    let dims = m.dims();
    let count = m.count();
    if count == 0 || count == dims.len() {
        let [nx, ny, nz] = dims.as_array().map(|n| n as f64);
        let diag = (nx * nx + ny * ny + nz * nz).sqrt();
        let v = if count == 0 { diag } else { -diag };
        return FiltrationField { dims, values: vec![v; dims.len()], degenerate: true };
    }
    let inside = squared_edt(m);
    let outside = squared_edt(&m.complement());
    let values = (0..dims.len())
        .map(|i| if m.get(i) { -inside[i].sqrt() } else { outside[i].sqrt() })
        .collect();
    FiltrationField { dims, values, degenerate: false }
}
