//! Persistent homology of a cubical complex in degrees 0, 1 and 2.
//!
//! Cells are ordered by (value, dimension, index). Degree 0 comes from a
//! union-find sweep over edges and degree 2 from a union-find sweep over
//! faces in reverse order on the dual graph of voxels plus one outside node.
//! Degree 1 reduces the boundary columns of the remaining 2-cells with the
//! twist rule: columns of faces that give birth to voids are cleared, and
//! rows of edges that kill components are compressed away. Pairs with zero
//! persistence and essential classes are dropped.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::descriptors::percolation::UnionFind;
use crate::topology::complex::CubicalComplex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistencePair {
    pub birth: f64,
    pub death: f64,
}

impl PersistencePair {
    pub fn persistence(&self) -> f64 {
        self.death - self.birth
    }
}

/// Finite pairs of one homology degree.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PersistenceDiagram {
    pub k: u8,
    pub pairs: Vec<PersistencePair>,
}

impl PersistenceDiagram {
    pub fn new(k: u8, mut pairs: Vec<PersistencePair>) -> Self {
        pairs.sort_by(|a, b| a.birth.total_cmp(&b.birth).then(a.death.total_cmp(&b.death)));
        Self { k, pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Multiplies birth and death by `factor`, e.g. voxel units to µm.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            k: self.k,
            pairs: self
                .pairs
                .iter()
                .map(|p| PersistencePair { birth: p.birth * factor, death: p.death * factor })
                .collect(),
        }
    }

    /// Multiset union.
    pub fn union(&self, other: &Self) -> Self {
        let mut pairs = self.pairs.clone();
        pairs.extend_from_slice(&other.pairs);
        Self::new(self.k, pairs)
    }
}

/// Total filtration order on cells.
fn key_cmp(c: &CubicalComplex, a: usize, b: usize) -> Ordering {
    c.value(a)
        .total_cmp(&c.value(b))
        .then(c.dim(a).cmp(&c.dim(b)))
        .then(a.cmp(&b))
}

/// Same-dimension cells in filtration order.
fn sorted_cells(c: &CubicalComplex, dim: usize) -> Vec<u32> {
    let mut cells: Vec<u32> = (0..c.len() as u32).filter(|&i| c.dim(i as usize) == dim).collect();
    let v = c.values();
    cells.sort_unstable_by(|&a, &b| v[a as usize].total_cmp(&v[b as usize]).then(a.cmp(&b)));
    cells
}

pub fn compute_persistence(c: &CubicalComplex) -> [PersistenceDiagram; 3] {
    let n = c.len();
    let edges = sorted_cells(c, 1);
    let faces = sorted_cells(c, 2);

    // Degree 0.
    let mut h0 = Vec::new();
    let mut killer_edge = vec![false; n];
    {
        let mut uf = UnionFind::new(n);
        // Oldest vertex of each root.
        let mut oldest: Vec<u32> = (0..n as u32).collect();
        for &e in &edges {
            let mut ends = c.faces(e as usize);
            let (a, b) = (ends.next().expect("edge has two ends"), ends.next().expect("edge has two ends"));
            let (ra, rb) = (uf.find(a), uf.find(b));
            if ra == rb {
                continue;
            }
            let (oa, ob) = (oldest[ra] as usize, oldest[rb] as usize);
            let (elder, younger) = if key_cmp(c, oa, ob) == Ordering::Less { (oa, ob) } else { (ob, oa) };
            let root = uf.union(ra, rb);
            oldest[root] = elder as u32;
            killer_edge[e as usize] = true;
            let (birth, death) = (c.value(younger), c.value(e as usize));
            if death > birth {
                h0.push(PersistencePair { birth, death });
            }
        }
    }

    // Degree 2 on the dual graph; node `n` is the outside.
    let mut h2 = Vec::new();
    let mut void_birth = vec![false; n];
    {
        let outside = n;
        let mut uf = UnionFind::new(n + 1);
        // Representative voxel of each root: the one latest in filtration
        // order, i.e. first to appear in the reverse sweep.
        let mut rep: Vec<u32> = (0..=n as u32).collect();
        let cells = c.cell_dims();
        let shape = cells.as_array();
        let strides = [1, cells.nx, cells.nx * cells.ny];
        for &f in faces.iter().rev() {
            let f = f as usize;
            let p = cells.coords(f);
            let axis = (0..3).find(|&a| p[a] % 2 == 0).expect("a 2-cell has one even coordinate");
            let lo = if p[axis] > 0 { f - strides[axis] } else { outside };
            let hi = if p[axis] + 1 < shape[axis] { f + strides[axis] } else { outside };
            let (ra, rb) = (uf.find(lo), uf.find(hi));
            if ra == rb {
                continue;
            }
            let (pa, pb) = (rep[ra] as usize, rep[rb] as usize);
            // The outside is older than every voxel.
            let a_older = pb != outside && (pa == outside || key_cmp(c, pa, pb) == Ordering::Greater);
            let (elder, younger) = if a_older { (pa, pb) } else { (pb, pa) };
            let root = uf.union(ra, rb);
            rep[root] = elder as u32;
            void_birth[f] = true;
            let (birth, death) = (c.value(f), c.value(younger));
            if death > birth {
                h2.push(PersistencePair { birth, death });
            }
        }
    }

    // Degree 1.
    let mut h1 = Vec::new();
    {
        let mut rank = vec![u32::MAX; n];
        for (r, &e) in edges.iter().enumerate() {
            rank[e as usize] = r as u32;
        }
        let mut pivot_col = vec![u32::MAX; edges.len()];
        let mut store = ColumnStore::default();
        let mut col: Vec<u32> = Vec::with_capacity(4);
        let mut scratch = Vec::new();
        for &f in &faces {
            let f = f as usize;
            if void_birth[f] {
                continue;
            }
            col.clear();
            col.extend(c.faces(f).filter(|&e| !killer_edge[e]).map(|e| rank[e]));
            col.sort_unstable();
            while let Some(&low) = col.last() {
                let p = pivot_col[low as usize];
                if p == u32::MAX {
                    break;
                }
                xor_into(&mut col, store.get(p), &mut scratch);
            }
            let Some(&low) = col.last() else { continue };
            pivot_col[low as usize] = store.push(&col);
            let (birth, death) = (c.value(edges[low as usize] as usize), c.value(f));
            if death > birth {
                h1.push(PersistencePair { birth, death });
            }
        }
    }

    [PersistenceDiagram::new(0, h0), PersistenceDiagram::new(1, h1), PersistenceDiagram::new(2, h2)]
}

/// Reduced columns stored back to back.
#[derive(Default)]
struct ColumnStore {
    data: Vec<u32>,
    start: Vec<usize>,
}

impl ColumnStore {
    fn push(&mut self, col: &[u32]) -> u32 {
        self.start.push(self.data.len());
        self.data.extend_from_slice(col);
        (self.start.len() - 1) as u32
    }

    fn get(&self, id: u32) -> &[u32] {
        let i = id as usize;
        let end = self.start.get(i + 1).copied().unwrap_or(self.data.len());
        &self.data[self.start[i]..end]
    }
}

/// `col ← col Δ other` for sorted sets.
fn xor_into(col: &mut Vec<u32>, other: &[u32], scratch: &mut Vec<u32>) {
    scratch.clear();
    let (mut i, mut j) = (0, 0);
    while i < col.len() && j < other.len() {
        match col[i].cmp(&other[j]) {
            Ordering::Less => {
                scratch.push(col[i]);
                i += 1;
            }
            Ordering::Greater => {
                scratch.push(other[j]);
                j += 1;
            }
            Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    scratch.extend_from_slice(&col[i..]);
    scratch.extend_from_slice(&other[j..]);
    std::mem::swap(col, scratch);
}
