//! Grain labelling by marker-based watershed on the distance transform.

use std::collections::VecDeque;

use crate::descriptors::edt::squared_edt;
use crate::error::{Error, Result};
use crate::grid::{moore_offsets, Dims, PhaseMask};

/// Grain id per voxel: 0 outside the phase, 1..=G inside.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledGrid {
    dims: Dims,
    labels: Vec<u32>,
    grains: usize,
}

impl LabeledGrid {
    pub fn new(dims: Dims, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != dims.len() {
            return Err(Error::InvalidArgument("label count does not match dims".into()));
        }
        let grains = labels.iter().copied().max().unwrap_or(0) as usize;
        Ok(Self { dims, labels, grains })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn grain_count(&self) -> usize {
        self.grains
    }

    /// Voxel count of every grain, indexed by `id - 1`.
    pub fn grain_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.grains];
        for &l in &self.labels {
            if l > 0 {
                sizes[l as usize - 1] += 1;
            }
        }
        sizes
    }
}

struct Neighbourhood {
    offsets: Vec<[isize; 3]>,
    /// Euclidean length of each offset.
    lengths: Vec<f64>,
    /// Number of non-zero components: 1 face, 2 edge, 3 corner.
    class: Vec<u8>,
}

impl Neighbourhood {
    fn moore() -> Self {
        let offsets: Vec<[isize; 3]> = moore_offsets().collect();
        let class: Vec<u8> = offsets
            .iter()
            .map(|o| o.iter().filter(|c| **c != 0).count() as u8)
            .collect();
        let lengths = class.iter().map(|c| (*c as f64).sqrt()).collect();
        Self { offsets, lengths, class }
    }
}

/// Markers are 26-connected plateaus of the exact distance transform whose
/// neighbours are all strictly lower; each plateau becomes one grain seed.
/// The flood then proceeds level by level from the highest distance down.
/// Within a level, voxels join in breadth-first waves from the already
/// labelled region; a voxel takes the label of the neighbour with the
/// steepest distance ascent, preferring face over edge over corner contact,
/// then the label held by more such neighbours, then the higher marker,
/// then the nearer marker centroid, then the larger and more spread-out
/// marker plateau, then the marker with more distance mass around it, then
/// the smaller id. All but the last key are invariant
/// under grid rotations.
pub fn watershed_grains(mask: &PhaseMask, _voxel_size: f64) -> LabeledGrid {
    let dims = mask.dims();
    let n = dims.len();
    let d2 = squared_edt(mask);
    let nb = Neighbourhood::moore();
    let mut labels = vec![0u32; n];

    let value = |i: usize| if mask.get(i) { d2[i] } else { 0.0 };

    // Marker plateaus.
    let mut candidate = vec![false; n];
    for i in 0..n {
        if !mask.get(i) {
            continue;
        }
        let c = dims.coords(i);
        candidate[i] = nb
            .offsets
            .iter()
            .filter_map(|o| dims.offset(c, *o))
            .all(|j| value(j) <= d2[i]);
    }
    let mut visited = vec![false; n];
    let mut grains = 0u32;
    let mut markers: Vec<Marker> = Vec::new();
    let mut plateau = Vec::new();
    let mut queue = VecDeque::new();
    for i in 0..n {
        if !candidate[i] || visited[i] {
            continue;
        }
        plateau.clear();
        visited[i] = true;
        queue.push_back(i);
        let mut is_max = true;
        while let Some(v) = queue.pop_front() {
            plateau.push(v);
            is_max &= candidate[v];
            let c = dims.coords(v);
            for o in &nb.offsets {
                if let Some(j) = dims.offset(c, *o) {
                    if mask.get(j) && !visited[j] && d2[j] == d2[v] {
                        visited[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        if is_max {
            grains += 1;
            let mut sum = [0i64; 3];
            let mut sum_sq = 0i64;
            for &v in &plateau {
                labels[v] = grains;
                let c = dims.coords(v);
                for a in 0..3 {
                    sum[a] += c[a] as i64;
                    sum_sq += (c[a] * c[a]) as i64;
                }
            }
            let size = plateau.len() as i64;
            // size² · Σ|c − centroid|² = size · Σ|c|² − |Σc|²
            let inertia = size * sum_sq - sum.iter().map(|s| s * s).sum::<i64>();
            let context = context_signature(&plateau, dims, &d2, mask);
            markers.push(Marker { height: d2[i], sum, size, inertia, context });
        }
    }

    // Level-synchronous flood.
    let mut order: Vec<usize> = (0..n).filter(|&i| mask.get(i)).collect();
    order.sort_by(|a, b| d2[*b].total_cmp(&d2[*a]).then(a.cmp(b)));
    let mut start = 0;
    let mut pending = Vec::new();
    let mut wave: Vec<(usize, u32)> = Vec::new();
    while start < order.len() {
        let level = d2[order[start]];
        let mut end = start;
        while end < order.len() && d2[order[end]] == level {
            end += 1;
        }
        pending.clear();
        pending.extend(order[start..end].iter().copied().filter(|&v| labels[v] == 0));
        while !pending.is_empty() {
            wave.clear();
            for &v in &pending {
                if let Some(l) = pick_label(v, dims, &nb, &labels, &d2, mask, &markers) {
                    wave.push((v, l));
                }
            }
            if wave.is_empty() {
                // Unreachable for a marker set built as above; every voxel
                // has a path of non-decreasing distance to some marker.
                break;
            }
            for &(v, l) in &wave {
                labels[v] = l;
            }
            pending.retain(|&v| labels[v] == 0);
        }
        start = end;
    }

    LabeledGrid { dims, labels, grains: grains as usize }
}

struct Marker {
    height: f64,
    /// Coordinate sums and voxel count of the plateau; the centroid is
    /// `sum / size`, kept in integers so comparisons are exact.
    sum: [i64; 3],
    size: i64,
    /// Second moment of the plateau about its centroid, times `size`.
    inertia: i64,
    context: (u64, u64),
}

/// Half-width of the box that [`context_signature`] sums over.
const CONTEXT_RADIUS: isize = 3;

/// Sums of d² and d⁴ over the cubic box around every plateau voxel. The box
/// maps onto itself under 90° rotations, so the sums are rotation-invariant.
fn context_signature(plateau: &[usize], dims: Dims, d2: &[f64], mask: &PhaseMask) -> (u64, u64) {
    let (mut s1, mut s2) = (0u64, 0u64);
    for &v in plateau {
        let c = dims.coords(v);
        for dz in -CONTEXT_RADIUS..=CONTEXT_RADIUS {
            for dy in -CONTEXT_RADIUS..=CONTEXT_RADIUS {
                for dx in -CONTEXT_RADIUS..=CONTEXT_RADIUS {
                    let Some(j) = dims.offset(c, [dx, dy, dz]) else { continue };
                    if mask.get(j) && d2[j].is_finite() {
                        let d = d2[j] as u64;
                        s1 += d;
                        s2 += d * d;
                    }
                }
            }
        }
    }
    (s1, s2)
}

impl Marker {
    /// Squared distance from `c` to the centroid, times `size²`.
    fn scaled_dist2(&self, c: [usize; 3]) -> i128 {
        (0..3)
            .map(|a| {
                let d = (self.size * c[a] as i64 - self.sum[a]) as i128;
                d * d
            })
            .sum()
    }
}

fn pick_label(
    v: usize,
    dims: Dims,
    nb: &Neighbourhood,
    labels: &[u32],
    d2: &[f64],
    mask: &PhaseMask,
    markers: &[Marker],
) -> Option<u32> {
    let c = dims.coords(v);
    let here = d2[v].sqrt();
    let mut best: Option<(f64, u8)> = None;
    let mut tally: Vec<(u32, u32)> = Vec::new();
    for (k, o) in nb.offsets.iter().enumerate() {
        let Some(j) = dims.offset(c, *o) else { continue };
        if !mask.get(j) || labels[j] == 0 {
            continue;
        }
        let slope = if d2[j].is_infinite() && d2[v].is_infinite() {
            0.0
        } else {
            (d2[j].sqrt() - here) / nb.lengths[k]
        };
        let key = (slope, nb.class[k]);
        let better = match best {
            None => true,
            Some((s, cl)) => slope > s || (slope == s && key.1 < cl),
        };
        if better {
            best = Some(key);
            tally.clear();
        }
        if best == Some(key) {
            match tally.iter_mut().find(|(l, _)| *l == labels[j]) {
                Some(entry) => entry.1 += 1,
                None => tally.push((labels[j], 1)),
            }
        }
    }
    tally
        .into_iter()
        .max_by(|a, b| {
            let (ma, mb) = (&markers[a.0 as usize - 1], &markers[b.0 as usize - 1]);
            a.1.cmp(&b.1)
                .then(ma.height.total_cmp(&mb.height))
                .then({
                    // d_a² < d_b²  ⇔  D_a·s_b² < D_b·s_a²
                    let lhs = ma.scaled_dist2(c) * (mb.size as i128).pow(2);
                    let rhs = mb.scaled_dist2(c) * (ma.size as i128).pow(2);
                    rhs.cmp(&lhs)
                })
                .then(ma.size.cmp(&mb.size))
                .then(ma.inertia.cmp(&mb.inertia))
                .then(ma.context.cmp(&mb.context))
                .then(b.0.cmp(&a.0))
        })
        .map(|(l, _)| l)
}

/// Mean over grains of the equivalent-sphere diameter (6V/π)^(1/3), in µm.
pub fn mean_equivalent_diameter(l: &LabeledGrid, voxel_size: f64) -> Result<f64> {
    if l.grain_count() == 0 {
        return Err(Error::UndefinedDescriptor("no grains in phase".into()));
    }
    let voxel_volume = voxel_size.powi(3);
    let sizes = l.grain_sizes();
    let sum: f64 = sizes
        .iter()
        .map(|&s| (6.0 * s as f64 * voxel_volume / std::f64::consts::PI).cbrt())
        .sum();
    Ok(sum / sizes.len() as f64)
}
