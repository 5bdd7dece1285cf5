//! Three-phase voxel grids.
//!
//! A [`PhaseGrid`] stores one [`PhaseLabel`] byte per voxel in x-fastest order
//! together with an isotropic voxel pitch in micrometres. This module also
//! hosts the synthetic microstructure generator, interior cropping, phase
//! masks, volume fractions and the binary grid file format.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Material phase of a voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum PhaseLabel {
    Pore = 0,
    Ni = 1,
    Ysz = 2,
}

impl PhaseLabel {
    /// Canonical phase order used for channels, branches and CSV columns.
    pub const ALL: [PhaseLabel; 3] = [PhaseLabel::Ni, PhaseLabel::Ysz, PhaseLabel::Pore];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PhaseLabel::Pore => "pore",
            PhaseLabel::Ni => "ni",
            PhaseLabel::Ysz => "ysz",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pore" | "pores" => Some(PhaseLabel::Pore),
            "ni" | "nickel" => Some(PhaseLabel::Ni),
            "ysz" => Some(PhaseLabel::Ysz),
            _ => None,
        }
    }
}

impl TryFrom<u8> for PhaseLabel {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(PhaseLabel::Pore),
            1 => Ok(PhaseLabel::Ni),
            2 => Ok(PhaseLabel::Ysz),
            other => Err(Error::Format(format!("invalid phase label byte {other}"))),
        }
    }
}

impl std::fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Grid extents in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub fn cube(n: usize) -> Self {
        Self::new(n, n, n)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.nx;
        let r = i / self.nx;
        [x, r % self.ny, r / self.ny]
    }

    /// Index of `c + off`, or `None` when it leaves the grid.
    #[inline]
    pub fn offset(&self, c: [usize; 3], off: [isize; 3]) -> Option<usize> {
        let n = self.as_array();
        let mut p = [0usize; 3];
        for a in 0..3 {
            let v = c[a] as isize + off[a];
            if v < 0 || v >= n[a] as isize {
                return None;
            }
            p[a] = v as usize;
        }
        Some(self.index(p[0], p[1], p[2]))
    }

    pub fn on_boundary(&self, c: [usize; 3]) -> bool {
        let n = self.as_array();
        (0..3).any(|a| c[a] == 0 || c[a] + 1 == n[a])
    }
}

/// Offsets of the 6 face neighbours.
pub const FACE_OFFSETS: [[isize; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

/// Offsets of the 26-neighbourhood.
pub fn moore_offsets() -> impl Iterator<Item = [isize; 3]> {
    (-1..=1).flat_map(|z| {
        (-1..=1).flat_map(move |y| {
            (-1..=1)
                .map(move |x| [x, y, z])
                .filter(|o| *o != [0, 0, 0])
        })
    })
}

/// Dense categorical voxel volume.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGrid {
    dims: Dims,
    voxel_size: f64,
    data: Vec<PhaseLabel>,
}

/// Uniform grid of `fill`.
pub fn new_grid(nx: usize, ny: usize, nz: usize, voxel_size: f64, fill: PhaseLabel) -> Result<PhaseGrid> {
    let dims = Dims::new(nx, ny, nz);
    check_dims(dims, voxel_size)?;
    Ok(PhaseGrid { dims, voxel_size, data: vec![fill; dims.len()] })
}

fn check_dims(dims: Dims, voxel_size: f64) -> Result<()> {
    if dims.nx == 0 || dims.ny == 0 || dims.nz == 0 {
        return Err(invalid(format!("grid dimensions must be positive, got {dims:?}")));
    }
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(invalid(format!("voxel size must be positive, got {voxel_size}")));
    }
    Ok(())
}

impl PhaseGrid {
    pub fn from_labels(dims: Dims, voxel_size: f64, data: Vec<PhaseLabel>) -> Result<Self> {
        check_dims(dims, voxel_size)?;
        if data.len() != dims.len() {
            return Err(invalid(format!(
                "label count {} does not match dimensions {dims:?}",
                data.len()
            )));
        }
        Ok(Self { dims, voxel_size, data })
    }

    /// Builds a grid by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(
        dims: Dims,
        voxel_size: f64,
        mut f: impl FnMut(usize, usize, usize) -> PhaseLabel,
    ) -> Result<Self> {
        check_dims(dims, voxel_size)?;
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Ok(Self { dims, voxel_size, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn labels(&self) -> &[PhaseLabel] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> PhaseLabel {
        self.data[self.dims.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, label: PhaseLabel) {
        let i = self.dims.index(x, y, z);
        self.data[i] = label;
    }

    /// Physical volume of the domain in µm³.
    pub fn volume(&self) -> f64 {
        self.dims.len() as f64 * self.voxel_size.powi(3)
    }

    /// Rotates the grid by 90° about `axis` (0 = x, 1 = y, 2 = z).
    ///
    /// About z the voxel at (x, y, z) moves to (ny-1-y, x, z); the other
    /// axes follow the same right-handed pattern.
    pub fn rotate90(&self, axis: usize) -> PhaseGrid {
        let [nx, ny, nz] = self.dims.as_array();
        let (dims, map): (Dims, Box<dyn Fn(usize, usize, usize) -> [usize; 3]>) = match axis {
            0 => (Dims::new(nx, nz, ny), Box::new(move |x, y, z| [x, nz - 1 - z, y])),
            1 => (Dims::new(nz, ny, nx), Box::new(move |x, y, z| [z, y, nx - 1 - x])),
            _ => (Dims::new(ny, nx, nz), Box::new(move |x, y, z| [ny - 1 - y, x, z])),
        };
        let mut data = vec![PhaseLabel::Pore; dims.len()];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let [a, b, c] = map(x, y, z);
                    data[dims.index(a, b, c)] = self.get(x, y, z);
                }
            }
        }
        PhaseGrid { dims, voxel_size: self.voxel_size, data }
    }
}

/// Binary occupancy of one phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseMask {
    dims: Dims,
    bits: Vec<bool>,
}

impl PhaseMask {
    pub fn new(dims: Dims, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.len() || dims.is_empty() {
            return Err(invalid(format!("mask of {} bits does not match {dims:?}", bits.len())));
        }
        Ok(Self { dims, bits })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    bits.push(f(x, y, z));
                }
            }
        }
        Self { dims, bits }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn complement(&self) -> PhaseMask {
        PhaseMask { dims: self.dims, bits: self.bits.iter().map(|b| !b).collect() }
    }
}

/// Bit set iff the voxel carries `phase`.
pub fn phase_mask(g: &PhaseGrid, phase: PhaseLabel) -> PhaseMask {
    PhaseMask { dims: g.dims, bits: g.data.iter().map(|l| *l == phase).collect() }
}

/// Per-phase values, used for fractions and targets.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseFractions {
    pub ni: f64,
    pub ysz: f64,
    pub pore: f64,
}

impl PhaseFractions {
    pub fn new(ni: f64, ysz: f64, pore: f64) -> Self {
        Self { ni, ysz, pore }
    }

    pub fn get(&self, phase: PhaseLabel) -> f64 {
        match phase {
            PhaseLabel::Ni => self.ni,
            PhaseLabel::Ysz => self.ysz,
            PhaseLabel::Pore => self.pore,
        }
    }

    pub fn sum(&self) -> f64 {
        self.ni + self.ysz + self.pore
    }
}

/// Voxel-count fraction of each phase.
pub fn volume_fractions(g: &PhaseGrid) -> PhaseFractions {
    let mut counts = [0usize; 3];
    for l in &g.data {
        counts[l.index()] += 1;
    }
    let n = g.data.len() as f64;
    PhaseFractions {
        pore: counts[PhaseLabel::Pore.index()] as f64 / n,
        ni: counts[PhaseLabel::Ni.index()] as f64 / n,
        ysz: counts[PhaseLabel::Ysz.index()] as f64 / n,
    }
}

/// Centred sub-grid with `margin` voxels removed from every face.
pub fn crop_interior(g: &PhaseGrid, margin: usize) -> Result<PhaseGrid> {
    let n = g.dims.as_array();
    if n.iter().any(|&d| 2 * margin >= d) {
        return Err(invalid(format!("margin {margin} too large for {:?}", g.dims)));
    }
    if margin == 0 {
        return Ok(g.clone());
    }
    let dims = Dims::new(n[0] - 2 * margin, n[1] - 2 * margin, n[2] - 2 * margin);
    PhaseGrid::from_fn(dims, g.voxel_size, |x, y, z| g.get(x + margin, y + margin, z + margin))
}

/// Margin that turns a domain of physical side `outer_len` into a centred
/// cube of side `inner_len`, when the cropped cube must hold `inner_voxels`.
///
/// 10 µm generated, 7.14 µm kept, 200 voxels kept gives 40 (280³ → 200³).
pub fn crop_margin(inner_voxels: usize, outer_len: f64, inner_len: f64) -> usize {
    let outer_voxels = inner_voxels as f64 * outer_len / inner_len;
    ((outer_voxels - inner_voxels as f64) / 2.0).round().max(0.0) as usize
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub target_fractions: PhaseFractions,
    /// Mean sphere radius in voxels.
    pub mean_particle_radius: f64,
    pub ca_iterations: usize,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let f = &self.target_fractions;
        for p in PhaseLabel::ALL {
            let v = f.get(p);
            if !(v > 0.0 && v < 1.0) {
                return Err(invalid(format!("target fraction of {p} must lie in (0,1), got {v}")));
            }
        }
        if (f.sum() - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("target fractions sum to {}, expected 1", f.sum())));
        }
        if !(self.mean_particle_radius >= 1.0) {
            return Err(invalid(format!(
                "mean particle radius must be at least 1 voxel, got {}",
                self.mean_particle_radius
            )));
        }
        Ok(())
    }
}

const UNASSIGNED: u8 = u8::MAX;
/// Packing stops once this fraction of the domain is claimed by spheres.
const PACKING_COVERAGE: f64 = 0.98;
/// Relative spread of sphere radii around the mean.
const RADIUS_SPREAD: f64 = 0.3;

/// Seeded stand-in for a powder mixing and sintering simulator.
///
/// Spheres of the phase with the largest remaining deficit are dropped at
/// random positions and claim the free voxels they cover, until the targets
/// are (almost) met. Leftover voxels take the phase of the nearest sphere
/// centre. Then `ca_iterations` synchronous majority-vote rounds over the
/// 26-neighbourhood coarsen the morphology; a voxel only changes label when
/// one phase holds a strict majority among its neighbours.
pub fn generate_microstructure(cfg: &GeneratorConfig, dims: Dims, voxel_size: f64) -> Result<PhaseGrid> {
    cfg.validate()?;
    check_dims(dims, voxel_size)?;
    let total = dims.len();
    let targets: [f64; 3] = {
        let mut t = [0.0; 3];
        for p in PhaseLabel::ALL {
            t[p.index()] = cfg.target_fractions.get(p) * total as f64;
        }
        t
    };
    if targets.iter().any(|t| *t < 1.0) {
        return Err(Error::GenerationFailed(format!(
            "target fractions {:?} cannot be met with {total} voxels",
            cfg.target_fractions
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut labels = vec![UNASSIGNED; total];
    let mut claimed = [0usize; 3];
    let mut free = total;
    let mut seeds: Vec<([f64; 3], u8)> = Vec::new();
    let n = dims.as_array();
    let r_mean = cfg.mean_particle_radius;
    let sphere_volume = 4.0 / 3.0 * std::f64::consts::PI * r_mean.powi(3);
    let max_spheres = (200.0 * total as f64 / sphere_volume).ceil() as usize + 1000;

    while (free as f64) > (1.0 - PACKING_COVERAGE) * total as f64 && seeds.len() < max_spheres {
        let (phase, deficit) = (0..3)
            .map(|p| (p, targets[p] - claimed[p] as f64))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("three phases");
        if deficit <= 0.0 {
            break;
        }
        let center = [
            rng.random::<f64>() * n[0] as f64,
            rng.random::<f64>() * n[1] as f64,
            rng.random::<f64>() * n[2] as f64,
        ];
        let radius = r_mean * (1.0 + RADIUS_SPREAD * (2.0 * rng.random::<f64>() - 1.0));
        seeds.push((center, phase as u8));
        let got = claim_sphere(&mut labels, dims, center, radius, phase as u8);
        claimed[phase] += got;
        free -= got;
    }
    if seeds.is_empty() {
        return Err(Error::GenerationFailed("no particles could be placed".into()));
    }

    fill_nearest_seed(&mut labels, dims, &seeds, 2.0 * r_mean);

    for _ in 0..cfg.ca_iterations {
        if !majority_step(&mut labels, dims) {
            break;
        }
    }

    let data: Vec<PhaseLabel> = labels
        .into_iter()
        .map(|b| PhaseLabel::try_from(b).expect("all voxels assigned"))
        .collect();
    let grid = PhaseGrid { dims, voxel_size, data };
    let fr = volume_fractions(&grid);
    if PhaseLabel::ALL.iter().any(|p| fr.get(*p) == 0.0) {
        return Err(Error::GenerationFailed(format!("a phase vanished, fractions {fr:?}")));
    }
    Ok(grid)
}

fn claim_sphere(labels: &mut [u8], dims: Dims, c: [f64; 3], r: f64, phase: u8) -> usize {
    let n = dims.as_array();
    let lo = |a: usize| ((c[a] - r - 0.5).floor().max(0.0)) as usize;
    let hi = |a: usize| ((c[a] + r - 0.5).ceil().max(0.0) as usize).min(n[a] - 1);
    let r2 = r * r;
    let mut got = 0;
    for z in lo(2)..=hi(2) {
        let dz = z as f64 + 0.5 - c[2];
        for y in lo(1)..=hi(1) {
            let dy = y as f64 + 0.5 - c[1];
            for x in lo(0)..=hi(0) {
                let dx = x as f64 + 0.5 - c[0];
                if dx * dx + dy * dy + dz * dz <= r2 {
                    let i = dims.index(x, y, z);
                    if labels[i] == UNASSIGNED {
                        labels[i] = phase;
                        got += 1;
                    }
                }
            }
        }
    }
    got
}

/// Assigns every unclaimed voxel the phase of its nearest sphere centre,
/// using a bucket grid over the centres.
fn fill_nearest_seed(labels: &mut [u8], dims: Dims, seeds: &[([f64; 3], u8)], cell: f64) {
    let n = dims.as_array();
    let nb = [0, 1, 2].map(|a| ((n[a] as f64 / cell).ceil() as usize).max(1));
    let bucket_of = |p: [f64; 3]| -> [usize; 3] {
        [0, 1, 2].map(|a| ((p[a] / cell) as usize).min(nb[a] - 1))
    };
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); nb[0] * nb[1] * nb[2]];
    for (i, (p, _)) in seeds.iter().enumerate() {
        let b = bucket_of(*p);
        buckets[b[0] + nb[0] * (b[1] + nb[1] * b[2])].push(i);
    }
    let max_ring = nb.iter().copied().max().unwrap_or(1);
    for (i, label) in labels.iter_mut().enumerate() {
        if *label != UNASSIGNED {
            continue;
        }
        let c = dims.coords(i);
        let p = [c[0] as f64 + 0.5, c[1] as f64 + 0.5, c[2] as f64 + 0.5];
        let b = bucket_of(p);
        let mut best = (f64::INFINITY, usize::MAX);
        for ring in 0..=max_ring {
            // Every centre in a ring beyond this one is at least (ring-1)*cell away.
            if best.1 != usize::MAX && ((ring as f64 - 1.0) * cell).max(0.0).powi(2) > best.0 {
                break;
            }
            let r = ring as isize;
            for bz in -r..=r {
                for by in -r..=r {
                    for bx in -r..=r {
                        if bx.abs().max(by.abs()).max(bz.abs()) != r {
                            continue;
                        }
                        let q = [b[0] as isize + bx, b[1] as isize + by, b[2] as isize + bz];
                        if (0..3).any(|a| q[a] < 0 || q[a] >= nb[a] as isize) {
                            continue;
                        }
                        let bi = q[0] as usize + nb[0] * (q[1] as usize + nb[1] * q[2] as usize);
                        for &s in &buckets[bi] {
                            let sp = seeds[s].0;
                            let d2 = (0..3).map(|a| (sp[a] - p[a]).powi(2)).sum::<f64>();
                            if d2 < best.0 || (d2 == best.0 && s < best.1) {
                                best = (d2, s);
                            }
                        }
                    }
                }
            }
        }
        *label = seeds[best.1].1;
    }
}

/// One synchronous 26-neighbourhood majority round; returns whether any voxel changed.
fn majority_step(labels: &mut Vec<u8>, dims: Dims) -> bool {
    let offsets: Vec<[isize; 3]> = moore_offsets().collect();
    let mut next = labels.clone();
    let mut changed = false;
    for (i, slot) in next.iter_mut().enumerate() {
        let c = dims.coords(i);
        let mut counts = [0u32; 3];
        for off in &offsets {
            if let Some(j) = dims.offset(c, *off) {
                counts[labels[j] as usize] += 1;
            }
        }
        let max = *counts.iter().max().expect("three counts");
        let mut winners = (0..3).filter(|p| counts[*p] == max);
        let first = winners.next().expect("at least one maximum");
        if winners.next().is_none() && first as u8 != labels[i] {
            *slot = first as u8;
            changed = true;
        }
    }
    *labels = next;
    changed
}

const GRID_MAGIC: &[u8; 4] = b"MSTR";
const GRID_VERSION: u32 = 1;

/// Writes the binary grid format: `MSTR`, u32 version, u32 nx, ny, nz,
/// f64 voxel size, then one label byte per voxel (little-endian, x-fastest).
pub fn write_grid<W: Write>(g: &PhaseGrid, mut w: W) -> Result<()> {
    w.write_all(GRID_MAGIC)?;
    w.write_all(&GRID_VERSION.to_le_bytes())?;
    for d in g.dims.as_array() {
        let d = u32::try_from(d).map_err(|_| invalid("grid dimension exceeds u32"))?;
        w.write_all(&d.to_le_bytes())?;
    }
    w.write_all(&g.voxel_size.to_le_bytes())?;
    let bytes: Vec<u8> = g.data.iter().map(|l| *l as u8).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_grid<R: Read>(mut r: R) -> Result<PhaseGrid> {
    let mut head = [0u8; 4 + 4 + 12 + 8];
    r.read_exact(&mut head)
        .map_err(|e| Error::Format(format!("truncated grid header: {e}")))?;
    if &head[0..4] != GRID_MAGIC {
        return Err(Error::Format("bad grid magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(head[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != GRID_VERSION {
        return Err(Error::Format(format!("unsupported grid version {version}")));
    }
    let dims = Dims::new(u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
    let voxel_size = f64::from_le_bytes(head[20..28].try_into().expect("8 bytes"));
    check_dims(dims, voxel_size).map_err(|e| Error::Format(e.to_string()))?;
    let mut bytes = vec![0u8; dims.len()];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::Format(format!("truncated grid body: {e}")))?;
    let data = bytes
        .into_iter()
        .map(PhaseLabel::try_from)
        .collect::<Result<Vec<_>>>()?;
    Ok(PhaseGrid { dims, voxel_size, data })
}

pub fn save_grid(g: &PhaseGrid, path: &std::path::Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_grid(g, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_grid(path: &std::path::Path) -> Result<PhaseGrid> {
    let f = std::fs::File::open(path)?;
    read_grid(std::io::BufReader::new(f))
}
