//! T-construction cubical complex over a voxel filtration.
//!
//! Cells live on the doubled grid of (2nx+1)(2ny+1)(2nz+1) points. A cell's
//! dimension is the number of odd coordinates; voxel (x, y, z) is the 3-cell
//! at (2x+1, 2y+1, 2z+1). Faces of a cell are reached by stepping ±1 along
//! one of its odd coordinates.

use crate::grid::Dims;
use crate::topology::filtration::FiltrationField;

#[derive(Debug, Clone, PartialEq)]
pub struct CubicalComplex {
    voxels: Dims,
    cells: Dims,
    values: Vec<f64>,
}

/// Every cell takes the minimum value over its incident voxels.
pub fn build_complex(f: &FiltrationField) -> CubicalComplex {
    let v = f.dims();
    let mut data = f.values().to_vec();
    let mut shape = v.as_array();
    for axis in 0..3 {
        data = expand_axis(&data, shape, axis);
        shape[axis] = 2 * shape[axis] + 1;
    }
    CubicalComplex { voxels: v, cells: Dims::new(shape[0], shape[1], shape[2]), values: data }
}

/// Doubles `axis`: odd positions copy the voxel, even ones take the minimum
/// of their (one or two) neighbours.
fn expand_axis(src: &[f64], shape: [usize; 3], axis: usize) -> Vec<f64> {
    let mut out_shape = shape;
    out_shape[axis] = 2 * shape[axis] + 1;
    let n = shape[axis];
    let mut out = vec![0.0; out_shape.iter().product()];
    let stride_in = stride(shape, axis);
    let stride_out = stride(out_shape, axis);
    let outer: [usize; 2] = match axis {
        0 => [shape[1], shape[2]],
        1 => [shape[0], shape[2]],
        _ => [shape[0], shape[1]],
    };
    for b in 0..outer[1] {
        for a in 0..outer[0] {
            let (base_in, base_out) = match axis {
                0 => (shape[0] * (a + shape[1] * b), out_shape[0] * (a + out_shape[1] * b)),
                1 => (a + shape[0] * shape[1] * b, a + out_shape[0] * out_shape[1] * b),
                _ => (a + shape[0] * b, a + out_shape[0] * b),
            };
            for k in 0..=2 * n {
                let val = if k % 2 == 1 {
                    src[base_in + (k / 2) * stride_in]
                } else {
                    let hi = k / 2;
                    match (hi.checked_sub(1), (hi < n).then_some(hi)) {
                        (Some(l), Some(h)) => src[base_in + l * stride_in].min(src[base_in + h * stride_in]),
                        (Some(l), None) => src[base_in + l * stride_in],
                        (None, Some(h)) => src[base_in + h * stride_in],
                        (None, None) => unreachable!("axis length is at least one"),
                    }
                };
                out[base_out + k * stride_out] = val;
            }
        }
    }
    out
}

fn stride(shape: [usize; 3], axis: usize) -> usize {
    match axis {
        0 => 1,
        1 => shape[0],
        _ => shape[0] * shape[1],
    }
}

impl CubicalComplex {
    pub fn voxel_dims(&self) -> Dims {
        self.voxels
    }

    /// Dimensions of the doubled cell grid.
    pub fn cell_dims(&self) -> Dims {
        self.cells
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, cell: usize) -> f64 {
        self.values[cell]
    }

    pub fn dim(&self, cell: usize) -> usize {
        self.cells.coords(cell).iter().filter(|c| *c % 2 == 1).count()
    }

    /// Codimension-one faces of `cell`, two per odd coordinate.
    pub fn faces(&self, cell: usize) -> impl Iterator<Item = usize> + '_ {
        let c = self.cells.coords(cell);
        let strides = [1, self.cells.nx, self.cells.nx * self.cells.ny];
        (0..3)
            .filter(move |&a| c[a] % 2 == 1)
            .flat_map(move |a| [cell - strides[a], cell + strides[a]])
    }

    /// Codimension-one cofaces of `cell`, up to two per even coordinate.
    pub fn cofaces(&self, cell: usize) -> impl Iterator<Item = usize> + '_ {
        let c = self.cells.coords(cell);
        let n = self.cells.as_array();
        let strides = [1, self.cells.nx, self.cells.nx * self.cells.ny];
        (0..3).filter(move |&a| c[a] % 2 == 0).flat_map(move |a| {
            let lo = (c[a] > 0).then(|| cell - strides[a]);
            let hi = (c[a] + 1 < n[a]).then(|| cell + strides[a]);
            lo.into_iter().chain(hi)
        })
    }
}
