//! Six-connected components of a phase and their percolation state.

use crate::grid::{Dims, PhaseMask};

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n as u32).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] as usize != x {
            let grand = self.parent[self.parent[x] as usize];
            self.parent[x] = grand;
            x = grand as usize;
        }
        x
    }

    /// Merges the sets of `a` and `b`; returns the new root.
    pub fn union(&mut self, a: usize, b: usize) -> usize {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return ra;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big as u32;
        self.size[big] += self.size[small];
        big
    }
}

/// Marker for voxels outside the phase.
pub const NO_COMPONENT: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PercolationMap {
    dims: Dims,
    /// Component id per voxel, [`NO_COMPONENT`] outside the phase.
    component: Vec<u32>,
    /// Whether each component touches a domain face.
    percolated: Vec<bool>,
}

impl PercolationMap {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn component(&self, voxel: usize) -> Option<u32> {
        let c = self.component[voxel];
        (c != NO_COMPONENT).then_some(c)
    }

    pub fn components(&self) -> &[u32] {
        &self.component
    }

    pub fn component_count(&self) -> usize {
        self.percolated.len()
    }

    pub fn component_percolated(&self, c: u32) -> bool {
        self.percolated[c as usize]
    }

    /// True iff the voxel is in the phase and its component reaches the boundary.
    pub fn is_percolated(&self, voxel: usize) -> bool {
        self.component(voxel).is_some_and(|c| self.percolated[c as usize])
    }
}

/// Labels 6-connected components of `mask` in raster order of first voxel.
pub fn label_components(mask: &PhaseMask) -> (Vec<u32>, usize) {
    let dims = mask.dims();
    let mut uf = UnionFind::new(dims.len());
    for i in 0..dims.len() {
        if !mask.get(i) {
            continue;
        }
        let [x, y, z] = dims.coords(i);
        if x > 0 && mask.get(i - 1) {
            uf.union(i, i - 1);
        }
        if y > 0 && mask.get(i - dims.nx) {
            uf.union(i, i - dims.nx);
        }
        if z > 0 && mask.get(i - dims.nx * dims.ny) {
            uf.union(i, i - dims.nx * dims.ny);
        }
    }
    let mut id_of_root = vec![NO_COMPONENT; dims.len()];
    let mut labels = vec![NO_COMPONENT; dims.len()];
    let mut next = 0u32;
    for i in 0..dims.len() {
        if !mask.get(i) {
            continue;
        }
        let r = uf.find(i);
        if id_of_root[r] == NO_COMPONENT {
            id_of_root[r] = next;
            next += 1;
        }
        labels[i] = id_of_root[r];
    }
    (labels, next as usize)
}

/// Union-find over 6-connectivity; a component percolates iff it contains a
/// voxel on any of the six domain faces.
pub fn percolation(mask: &PhaseMask) -> PercolationMap {
    let dims = mask.dims();
    let (component, count) = label_components(mask);
    let mut percolated = vec![false; count];
    for (i, &c) in component.iter().enumerate() {
        if c != NO_COMPONENT && !percolated[c as usize] && dims.on_boundary(dims.coords(i)) {
            percolated[c as usize] = true;
        }
    }
    PercolationMap { dims, component, percolated }
}
