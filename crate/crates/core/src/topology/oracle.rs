//! Reference persistence by plain boundary-matrix reduction.
//!
//! Every cell gets a column; columns are reduced left to right with no
//! clearing, twist or compression. Only meant for tiny complexes.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::topology::complex::CubicalComplex;
use crate::topology::persistence::{PersistenceDiagram, PersistencePair};

pub const ORACLE_CELL_LIMIT: usize = 20_000;

pub fn brute_force_persistence(c: &CubicalComplex) -> Result<[PersistenceDiagram; 3]> {
    let n = c.len();
    if n > ORACLE_CELL_LIMIT {
        return Err(Error::OracleTooLarge { cells: n, limit: ORACLE_CELL_LIMIT });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        c.value(a)
            .total_cmp(&c.value(b))
            .then(c.dim(a).cmp(&c.dim(b)))
            .then(a.cmp(&b))
    });
    let mut position = vec![0usize; n];
    for (p, &cell) in order.iter().enumerate() {
        position[cell] = p;
    }

    let mut columns: Vec<Vec<usize>> = order
        .iter()
        .map(|&cell| {
            let mut col: Vec<usize> = c.faces(cell).map(|f| position[f]).collect();
            col.sort_unstable();
            col
        })
        .collect();

    let mut owner_of_low: HashMap<usize, usize> = HashMap::new();
    let mut pairs: [Vec<PersistencePair>; 3] = Default::default();
    for j in 0..n {
        loop {
            let Some(&low) = columns[j].last() else { break };
            let Some(&k) = owner_of_low.get(&low) else { break };
            let other = columns[k].clone();
            let mut merged = Vec::with_capacity(columns[j].len() + other.len());
            let (a, b) = (&columns[j], &other);
            let (mut i, mut m) = (0, 0);
            while i < a.len() || m < b.len() {
                if m == b.len() || (i < a.len() && a[i] < b[m]) {
                    merged.push(a[i]);
                    i += 1;
                } else if i == a.len() || b[m] < a[i] {
                    merged.push(b[m]);
                    m += 1;
                } else {
                    i += 1;
                    m += 1;
                }
            }
            columns[j] = merged;
        }
        if let Some(&low) = columns[j].last() {
            owner_of_low.insert(low, j);
            let (sigma, tau) = (order[low], order[j]);
            let (birth, death) = (c.value(sigma), c.value(tau));
            let k = c.dim(sigma);
            if death > birth && k < 3 {
                pairs[k].push(PersistencePair { birth, death });
            }
        }
    }
    let [p0, p1, p2] = pairs;
    Ok([PersistenceDiagram::new(0, p0), PersistenceDiagram::new(1, p1), PersistenceDiagram::new(2, p2)])
}
