//! Exact Euclidean distance transform.
//!
//! Separable lower-envelope-of-parabolas algorithm (Felzenszwalb and
//! Huttenlocher), applied along x, then y, then z on squared distances.
//! Squared distances between voxel centres are integers, so the result is
//! exact in `f64`.

use crate::grid::{Dims, PhaseMask};

/// Squared distance, in voxel units, from each in-mask voxel centre to the
/// nearest out-of-mask voxel centre; 0 outside the mask. Voxels of a mask
/// without any out-of-mask voxel get `f64::INFINITY`.
pub fn squared_edt(mask: &PhaseMask) -> Vec<f64> {
    let dims = mask.dims();
    let mut f: Vec<f64> = mask
        .bits()
        .iter()
        .map(|&b| if b { f64::INFINITY } else { 0.0 })
        .collect();
    transform_axis(&mut f, dims, 0);
    transform_axis(&mut f, dims, 1);
    transform_axis(&mut f, dims, 2);
    f
}

/// Distance in micrometres; see [`squared_edt`].
pub fn distance_transform(mask: &PhaseMask, voxel_size: f64) -> Vec<f64> {
    squared_edt(mask)
        .into_iter()
        .map(|d2| d2.sqrt() * voxel_size)
        .collect()
}

fn transform_axis(f: &mut [f64], dims: Dims, axis: usize) {
    let n = dims.as_array();
    let len = n[axis];
    if len == 1 {
        return;
    }
    let stride = match axis {
        0 => 1,
        1 => n[0],
        _ => n[0] * n[1],
    };
    let (o1, o2) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut line = vec![0.0; len];
    let mut out = vec![0.0; len];
    let mut scratch = Envelope::with_capacity(len);
    for b in 0..n[o2] {
        for a in 0..n[o1] {
            let mut c = [0usize; 3];
            c[o1] = a;
            c[o2] = b;
            let base = dims.index(c[0], c[1], c[2]);
            for (k, v) in line.iter_mut().enumerate() {
                *v = f[base + k * stride];
            }
            scratch.transform(&line, &mut out);
            for (k, v) in out.iter().enumerate() {
                f[base + k * stride] = *v;
            }
        }
    }
}

struct Envelope {
    v: Vec<usize>,
    z: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Self { v: Vec::with_capacity(n), z: Vec::with_capacity(n + 1) }
    }

    /// 1D squared distance transform of sampled function `f`; infinite
    /// samples are not sites.
    fn transform(&mut self, f: &[f64], out: &mut [f64]) {
        self.v.clear();
        self.z.clear();
        for (q, &fq) in f.iter().enumerate() {
            if !fq.is_finite() {
                continue;
            }
            let qf = q as f64;
            loop {
                match self.v.last() {
                    None => {
                        self.v.push(q);
                        self.z.clear();
                        self.z.push(f64::NEG_INFINITY);
                        break;
                    }
                    Some(&p) => {
                        let pf = p as f64;
                        let s = ((fq + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf));
                        if s <= *self.z.last().expect("boundary per site") {
                            self.v.pop();
                            self.z.pop();
                            if self.v.is_empty() {
                                continue;
                            }
                        } else {
                            self.v.push(q);
                            self.z.push(s);
                            break;
                        }
                    }
                }
            }
        }
        if self.v.is_empty() {
            out.iter_mut().for_each(|o| *o = f64::INFINITY);
            return;
        }
        let mut k = 0;
        for (q, o) in out.iter_mut().enumerate() {
            let qf = q as f64;
            while k + 1 < self.v.len() && self.z[k + 1] < qf {
                k += 1;
            }
            let p = self.v[k];
            let d = qf - p as f64;
            *o = d * d + f[p];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn brute(mask: &PhaseMask) -> Vec<f64> {
        let dims = mask.dims();
        let outside: Vec<[usize; 3]> = (0..dims.len())
            .filter(|&i| !mask.get(i))
            .map(|i| dims.coords(i))
            .collect();
        (0..dims.len())
            .map(|i| {
                if !mask.get(i) {
                    return 0.0;
                }
                let c = dims.coords(i);
                outside
                    .iter()
                    .map(|o| {
                        (0..3)
                            .map(|a| (c[a] as f64 - o[a] as f64).powi(2))
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn single_row() {
        let m = PhaseMask::new(Dims::new(3, 1, 1), vec![false, true, false]).unwrap();
        assert_eq!(distance_transform(&m, 1.0), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn slab_center() {
        let m = PhaseMask::from_fn(Dims::new(5, 4, 4), |x, _, _| (1..=3).contains(&x));
        let d = distance_transform(&m, 1.0);
        assert_eq!(d[m.dims().index(2, 1, 1)], 2.0);
        assert_eq!(d[m.dims().index(1, 3, 0)], 1.0);
    }

    #[test]
    fn pitch_scales_distance() {
        let m = PhaseMask::from_fn(Dims::new(5, 1, 1), |x, _, _| x > 0);
        let d = distance_transform(&m, 0.5);
        assert_eq!(d, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn matches_brute_force_on_random_masks() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for trial in 0..6 {
            let p = 0.5 + 0.08 * trial as f64;
            let m = PhaseMask::from_fn(Dims::cube(16), |_, _, _| rng.random::<f64>() < p);
            assert_eq!(squared_edt(&m), brute(&m));
        }
        let m = PhaseMask::from_fn(Dims::new(9, 3, 12), |_, _, _| rng.random::<f64>() < 0.9);
        assert_eq!(squared_edt(&m), brute(&m));
    }

    #[test]
    fn full_mask_is_infinite() {
        let m = PhaseMask::from_fn(Dims::cube(3), |_, _, _| true);
        assert!(squared_edt(&m).iter().all(|d| d.is_infinite()));
    }
}
