//! Interface surface, triple-phase-boundary network and Laplacian smoothing.

use crate::descriptors::percolation::{percolation, PercolationMap};
use crate::grid::{phase_mask, Dims, PhaseGrid, PhaseLabel};

const NO_VERTEX: u32 = u32::MAX;

/// Quad mesh of all faces shared by voxels of different phases. Vertices sit
/// on grid points and are shared between quads.
#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    /// Grid-point dimensions, one more than the voxel dims along each axis.
    points: Dims,
    voxel_size: f64,
    /// Vertex id per grid point, [`NO_VERTEX`] where no quad touches it.
    vertex_of_point: Vec<u32>,
    positions: Vec<[f64; 3]>,
    fixed: Vec<bool>,
    quads: Vec<[u32; 4]>,
}

impl SurfaceMesh {
    fn empty(dims: Dims, voxel_size: f64) -> Self {
        let points = Dims::new(dims.nx + 1, dims.ny + 1, dims.nz + 1);
        Self {
            points,
            voxel_size,
            vertex_of_point: vec![NO_VERTEX; points.len()],
            positions: Vec::new(),
            fixed: Vec::new(),
            quads: Vec::new(),
        }
    }

    fn vertex(&mut self, p: [usize; 3]) -> u32 {
        let i = self.points.index(p[0], p[1], p[2]);
        if self.vertex_of_point[i] == NO_VERTEX {
            let id = self.positions.len() as u32;
            self.vertex_of_point[i] = id;
            let h = self.voxel_size;
            self.positions.push([p[0] as f64 * h, p[1] as f64 * h, p[2] as f64 * h]);
            let on_boundary = (0..3).any(|a| p[a] == 0 || p[a] + 1 == self.points.as_array()[a]);
            self.fixed.push(on_boundary);
        }
        self.vertex_of_point[i]
    }

    /// Vertex at grid point `p`, if any quad touches it.
    pub fn vertex_at(&self, p: [usize; 3]) -> Option<u32> {
        let v = self.vertex_of_point[self.points.index(p[0], p[1], p[2])];
        (v != NO_VERTEX).then_some(v)
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn fixed(&self) -> &[bool] {
        &self.fixed
    }

    pub fn quads(&self) -> &[[u32; 4]] {
        &self.quads
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    /// Undirected mesh edges (quad sides), deduplicated.
    pub fn adjacency(&self) -> Adjacency {
        let mut edges = Vec::with_capacity(self.quads.len() * 4);
        for q in &self.quads {
            for k in 0..4 {
                edges.push((q[k], q[(k + 1) % 4]));
            }
        }
        Adjacency::from_edges(self.vertex_count(), edges)
    }
}

/// One quad per internal face between voxels of different phases.
pub fn extract_surface(g: &PhaseGrid) -> SurfaceMesh {
    let dims = g.dims();
    let mut mesh = SurfaceMesh::empty(dims, g.voxel_size());
    let labels = g.labels();
    for axis in 0..3 {
        let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
        for i in 0..dims.len() {
            let c = dims.coords(i);
            let mut off = [0isize; 3];
            off[axis] = 1;
            let Some(j) = dims.offset(c, off) else { continue };
            if labels[i] == labels[j] {
                continue;
            }
            let mut p = c;
            p[axis] += 1;
            let corner = |du: usize, dw: usize| {
                let mut q = p;
                q[u] += du;
                q[w] += dw;
                q
            };
            let quad = [
                mesh.vertex(corner(0, 0)),
                mesh.vertex(corner(1, 0)),
                mesh.vertex(corner(1, 1)),
                mesh.vertex(corner(0, 1)),
            ];
            mesh.quads.push(quad);
        }
    }
    mesh
}

/// Compressed neighbour lists over mesh vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    start: Vec<usize>,
    neighbours: Vec<u32>,
}

impl Adjacency {
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut pairs: Vec<(u32, u32)> = Vec::new();
        for (a, b) in edges {
            if a != b {
                pairs.push((a, b));
                pairs.push((b, a));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        let mut start = vec![0usize; n + 1];
        for &(a, _) in &pairs {
            start[a as usize + 1] += 1;
        }
        for k in 0..n {
            start[k + 1] += start[k];
        }
        Self { start, neighbours: pairs.into_iter().map(|(_, b)| b).collect() }
    }

    pub fn neighbours(&self, v: usize) -> &[u32] {
        &self.neighbours[self.start[v]..self.start[v + 1]]
    }

    pub fn len(&self) -> usize {
        self.start.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Triple-phase-boundary segments, each a grid edge whose incident voxels
/// contain all three phases.
#[derive(Debug, Clone, Default)]
pub struct TpbNetwork {
    pub segments: Vec<[u32; 2]>,
    /// True iff every incident voxel of the segment lies in a percolated
    /// component of its own phase.
    pub active: Vec<bool>,
}

impl TpbNetwork {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn adjacency(&self, vertex_count: usize) -> Adjacency {
        Adjacency::from_edges(vertex_count, self.segments.iter().map(|s| (s[0], s[1])))
    }

    /// Summed segment lengths at `positions`: (all, active only).
    pub fn lengths(&self, positions: &[[f64; 3]]) -> (f64, f64) {
        let mut total = 0.0;
        let mut active = 0.0;
        for (s, &on) in self.segments.iter().zip(&self.active) {
            let l = distance(positions[s[0] as usize], positions[s[1] as usize]);
            total += l;
            if on {
                active += l;
            }
        }
        (total, active)
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// `maps` is indexed by [`PhaseLabel::index`]. Segment endpoints are mesh
/// vertices; every TPB edge borders at least one interface quad.
pub fn extract_tpb(g: &PhaseGrid, mesh: &SurfaceMesh, maps: &[PercolationMap; 3]) -> TpbNetwork {
    let dims = g.dims();
    let labels = g.labels();
    let n = dims.as_array();
    let mut net = TpbNetwork::default();
    for axis in 0..3 {
        let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
        for pw in 0..=n[w] {
            for pu in 0..=n[u] {
                for pa in 0..n[axis] {
                    let mut seen = [false; 3];
                    let mut all_percolated = true;
                    for vw in pw.saturating_sub(1)..(pw + 1).min(n[w]) {
                        for vu in pu.saturating_sub(1)..(pu + 1).min(n[u]) {
                            let mut v = [0usize; 3];
                            v[axis] = pa;
                            v[u] = vu;
                            v[w] = vw;
                            let j = dims.index(v[0], v[1], v[2]);
                            let k = labels[j].index();
                            seen[k] = true;
                            all_percolated &= maps[k].is_percolated(j);
                        }
                    }
                    if !seen.iter().all(|s| *s) {
                        continue;
                    }
                    let mut p = [0usize; 3];
                    p[axis] = pa;
                    p[u] = pu;
                    p[w] = pw;
                    let mut q = p;
                    q[axis] += 1;
                    let a = mesh.vertex_at(p).expect("TPB edge borders an interface quad");
                    let b = mesh.vertex_at(q).expect("TPB edge borders an interface quad");
                    net.segments.push([a, b]);
                    net.active.push(all_percolated);
                }
            }
        }
    }
    net
}

/// Percolation maps of all three phases, indexed by [`PhaseLabel::index`].
pub fn phase_percolation(g: &PhaseGrid) -> [PercolationMap; 3] {
    let by_index = |k: usize| {
        let phase = PhaseLabel::ALL.into_iter().find(|p| p.index() == k).expect("three phases");
        percolation(&phase_mask(g, phase))
    };
    [by_index(0), by_index(1), by_index(2)]
}

/// Synchronous Laplacian relaxation: every unpinned vertex moves by
/// `lambda` toward the mean of its neighbours, `iterations` times.
/// Vertices without neighbours stay put.
pub fn laplacian_relax(
    positions: &mut [[f64; 3]],
    adjacency: &Adjacency,
    pinned: &[bool],
    lambda: f64,
    iterations: usize,
) {
    let mut next = positions.to_vec();
    for _ in 0..iterations {
        for v in 0..positions.len() {
            let nb = adjacency.neighbours(v);
            if pinned[v] || nb.is_empty() {
                next[v] = positions[v];
                continue;
            }
            let mut mean = [0.0; 3];
            for &u in nb {
                for a in 0..3 {
                    mean[a] += positions[u as usize][a];
                }
            }
            for a in 0..3 {
                mean[a] /= nb.len() as f64;
                next[v][a] = positions[v][a] + lambda * (mean[a] - positions[v][a]);
            }
        }
        positions.copy_from_slice(&next);
    }
}

pub const SURFACE_LAMBDA: f64 = 0.4;
pub const SURFACE_ITERATIONS: usize = 2;
pub const TPB_LAMBDA: f64 = 0.5;
pub const TPB_ITERATIONS: usize = 1;

/// Surface pass over mesh edges with TPB vertices held in place, then a
/// TPB pass over polyline neighbours. Boundary vertices never move.
pub fn laplacian_smooth(mesh: &SurfaceMesh, tpb: &TpbNetwork) -> Vec<[f64; 3]> {
    let mut positions = mesh.positions().to_vec();
    let mut pinned = mesh.fixed().to_vec();
    for s in &tpb.segments {
        pinned[s[0] as usize] = true;
        pinned[s[1] as usize] = true;
    }
    laplacian_relax(&mut positions, &mesh.adjacency(), &pinned, SURFACE_LAMBDA, SURFACE_ITERATIONS);
    laplacian_relax(
        &mut positions,
        &tpb.adjacency(mesh.vertex_count()),
        mesh.fixed(),
        TPB_LAMBDA,
        TPB_ITERATIONS,
    );
    positions
}

/// Smoothed TPB length per domain volume, in µm⁻²: (total, active).
pub fn tpb_length_density(g: &PhaseGrid) -> (f64, f64) {
    let maps = phase_percolation(g);
    tpb_length_density_with(g, &maps)
}

pub(crate) fn tpb_length_density_with(g: &PhaseGrid, maps: &[PercolationMap; 3]) -> (f64, f64) {
    let mesh = extract_surface(g);
    let tpb = extract_tpb(g, &mesh, maps);
    if tpb.is_empty() {
        return (0.0, 0.0);
    }
    let smoothed = laplacian_smooth(&mesh, &tpb);
    let (total, active) = tpb.lengths(&smoothed);
    let volume = g.volume();
    (total / volume, active / volume)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{new_grid, PhaseLabel::*};
    use rand::{Rng, SeedableRng};

    /// Four columns along z with quadrants (Ni, Ni, Ysz, Pore).
    fn straight_line(nz: usize, pitch: f64) -> PhaseGrid {
        PhaseGrid::from_fn(Dims::new(2, 2, nz), pitch, |x, y, _| match (x, y) {
            (_, 0) => Ni,
            (0, 1) => Ysz,
            _ => Pore,
        })
        .unwrap()
    }

    fn random_grid(n: usize, seed: u64) -> PhaseGrid {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        PhaseGrid::from_fn(Dims::cube(n), 1.0, |_, _, _| match rng.random_range(0..3) {
            0 => Ni,
            1 => Ysz,
            _ => Pore,
        })
        .unwrap()
    }

    #[test]
    fn uniform_grid_has_empty_mesh() {
        let g = new_grid(4, 4, 4, 1.0, Ni).unwrap();
        let m = extract_surface(&g);
        assert!(m.quads().is_empty());
        assert_eq!(m.vertex_count(), 0);
    }

    #[test]
    fn plane_split_quad_count() {
        let g = PhaseGrid::from_fn(Dims::new(6, 4, 5), 1.0, |x, _, _| if x < 3 { Ni } else { Pore }).unwrap();
        let m = extract_surface(&g);
        assert_eq!(m.quads().len(), 4 * 5);
        assert_eq!(m.vertex_count(), 5 * 6);
        // Only the interior rim is free: (ny-1)(nz-1) points.
        assert_eq!(m.fixed().iter().filter(|f| !**f).count(), 3 * 4);
    }

    #[test]
    fn quad_count_matches_face_scan() {
        for seed in 0..5 {
            let g = random_grid(9, seed);
            let d = g.dims();
            let mut faces = 0;
            let mut points = std::collections::BTreeSet::new();
            for z in 0..d.nz {
                for y in 0..d.ny {
                    for x in 0..d.nx {
                        let here = g.get(x, y, z);
                        let mut face = |ok: bool, other: PhaseLabel, corners: [[usize; 3]; 4]| {
                            if ok && other != here {
                                faces += 1;
                                points.extend(corners);
                            }
                        };
                        if x + 1 < d.nx {
                            face(true, g.get(x + 1, y, z), [[x + 1, y, z], [x + 1, y + 1, z], [x + 1, y, z + 1], [x + 1, y + 1, z + 1]]);
                        }
                        if y + 1 < d.ny {
                            face(true, g.get(x, y + 1, z), [[x, y + 1, z], [x + 1, y + 1, z], [x, y + 1, z + 1], [x + 1, y + 1, z + 1]]);
                        }
                        if z + 1 < d.nz {
                            face(true, g.get(x, y, z + 1), [[x, y, z + 1], [x + 1, y, z + 1], [x, y + 1, z + 1], [x + 1, y + 1, z + 1]]);
                        }
                    }
                }
            }
            let m = extract_surface(&g);
            assert_eq!(m.quads().len(), faces);
            assert_eq!(m.vertex_count(), points.len());
            for p in points {
                let v = m.vertex_at(p).unwrap() as usize;
                let on_boundary = p.iter().zip(d.as_array()).any(|(c, n)| *c == 0 || *c == n);
                assert_eq!(m.fixed()[v], on_boundary);
            }
        }
    }

    #[test]
    fn straight_line_network() {
        let g = straight_line(5, 0.25);
        let maps = phase_percolation(&g);
        let mesh = extract_surface(&g);
        let tpb = extract_tpb(&g, &mesh, &maps);
        assert_eq!(tpb.len(), 5);
        assert!(tpb.active.iter().all(|a| *a));
        for s in &tpb.segments {
            for v in s {
                let p = mesh.positions()[*v as usize];
                assert_eq!((p[0], p[1]), (0.25, 0.25));
            }
        }
        let smoothed = laplacian_smooth(&mesh, &tpb);
        for s in &tpb.segments {
            for v in s {
                assert_eq!(smoothed[*v as usize], mesh.positions()[*v as usize]);
            }
        }
    }

    #[test]
    fn straight_line_density() {
        for &a in &[1.0, 0.25, 7.14 / 200.0] {
            let (total, active) = tpb_length_density(&straight_line(6, a));
            let expected = 1.0 / (4.0 * a * a);
            assert!((total - expected).abs() <= 1e-12 * expected, "{total} vs {expected}");
            assert_eq!(active, total);
        }
    }

    #[test]
    fn two_phase_grid_has_no_tpb() {
        let g = PhaseGrid::from_fn(Dims::cube(6), 1.0, |x, y, _| if (x + y) % 3 == 0 { Ysz } else { Pore }).unwrap();
        let mesh = extract_surface(&g);
        assert!(extract_tpb(&g, &mesh, &phase_percolation(&g)).is_empty());
        assert_eq!(tpb_length_density(&g), (0.0, 0.0));
    }

    #[test]
    fn isolated_voxel_segments_are_inactive() {
        let mut g = PhaseGrid::from_fn(Dims::cube(6), 1.0, |x, _, _| if x < 3 { Ysz } else { Pore }).unwrap();
        g.set(2, 2, 2, Ni);
        let mesh = extract_surface(&g);
        let tpb = extract_tpb(&g, &mesh, &phase_percolation(&g));
        // The four edges of the Ni face lying on the Ysz/Pore plane.
        assert_eq!(tpb.len(), 4);
        assert!(tpb.active.iter().all(|a| !*a));
        let (total, active) = tpb_length_density(&g);
        assert!(total > 0.0);
        assert_eq!(active, 0.0);
    }

    #[test]
    fn relax_formula() {
        let mut pos = vec![[0.0, 0.0, 0.0], [1.5, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let adj = Adjacency::from_edges(3, [(0, 1), (1, 2)]);
        laplacian_relax(&mut pos, &adj, &[true, false, true], 0.5, 1);
        assert_eq!(pos[1], [1.25, 0.0, 0.0]);
        assert_eq!(pos[0], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn all_fixed_is_identity() {
        let g = random_grid(8, 4);
        let mesh = extract_surface(&g);
        let mut pos = mesh.positions().to_vec();
        let pinned = vec![true; pos.len()];
        laplacian_relax(&mut pos, &mesh.adjacency(), &pinned, 0.4, 2);
        assert_eq!(pos, mesh.positions());
    }

    #[test]
    fn staircase_gets_shorter() {
        // x,y staircase with fixed ends.
        let mut pos = Vec::new();
        for k in 0..6 {
            pos.push([k as f64, k as f64, 0.0]);
            pos.push([k as f64 + 1.0, k as f64, 0.0]);
        }
        let n = pos.len();
        let edges: Vec<(u32, u32)> = (0..n as u32 - 1).map(|i| (i, i + 1)).collect();
        let net = TpbNetwork { segments: edges.iter().map(|e| [e.0, e.1]).collect(), active: vec![true; n - 1] };
        let before = net.lengths(&pos).0;
        let mut pinned = vec![false; n];
        pinned[0] = true;
        pinned[n - 1] = true;
        laplacian_relax(&mut pos, &net.adjacency(n), &pinned, TPB_LAMBDA, TPB_ITERATIONS);
        let after = net.lengths(&pos).0;
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn staircase_grid_line_gets_shorter() {
        // Triple line along z that jogs by one voxel in x halfway up.
        let g = PhaseGrid::from_fn(Dims::new(4, 2, 8), 1.0, |x, y, z| {
            let cut = if z < 4 { 1 } else { 2 };
            match (x < cut, y) {
                (_, 0) => Ni,
                (true, 1) => Ysz,
                _ => Pore,
            }
        })
        .unwrap();
        let mesh = extract_surface(&g);
        let tpb = extract_tpb(&g, &mesh, &phase_percolation(&g));
        let raw = tpb.lengths(mesh.positions()).0;
        assert_eq!(raw, 9.0);
        let smooth = tpb.lengths(&laplacian_smooth(&mesh, &tpb)).0;
        assert!(smooth < raw);
    }

    #[test]
    fn active_never_exceeds_total() {
        for seed in 0..50 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1000 + seed);
            let bias: f64 = rng.random_range(0.2..0.45);
            let g = PhaseGrid::from_fn(Dims::cube(16), 0.5, |_, _, _| {
                let u: f64 = rng.random();
                if u < bias {
                    Ni
                } else if u < 2.0 * bias {
                    Ysz
                } else {
                    Pore
                }
            })
            .unwrap();
            let (total, active) = tpb_length_density(&g);
            assert!(active >= 0.0 && active <= total, "seed {seed}: {active} > {total}");
        }
    }
}
