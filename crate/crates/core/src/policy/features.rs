//! Per-residue geometric features.
//!
//! Each residue keeps its `k` nearest neighbors by Euclidean distance.
//! Distances are compared after rounding to 1e-6 so that geometrically equal
//! distances tie exactly; ties go to the lower index. Every neighbor contributes a radial-basis encoding of
//! its distance to one of eight slots chosen by sequence offset
//! `o = j - i`: one slot each for `o = -3, -2, -1, +1, +2, +3`, then one for
//! `o ≤ -4` and one for `o ≥ +4`. Contributions sharing a slot are summed.

use crate::geometry::Structure;
use crate::policy::Hyper;

pub const RBF_MAX: f64 = 20.0;
pub const OFFSET_BUCKETS: usize = 8;

fn bucket(offset: isize) -> usize {
    match offset {
        -3 => 0,
        -2 => 1,
        -1 => 2,
        1 => 3,
        2 => 4,
        3 => 5,
        o if o <= -4 => 6,
        _ => 7,
    }
}

/// Gaussian radial basis `j` of `n` evenly spaced centers on `[0, RBF_MAX]`.
pub fn rbf(distance: f64, j: usize, n: usize) -> f64 {
    let spacing = RBF_MAX / (n - 1) as f64;
    let z = (distance - j as f64 * spacing) / spacing;
    (-z * z).exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub dim: usize,
    /// Row-major `L × dim`.
    pub values: Vec<f64>,
    /// Nearest neighbors of each residue, ascending by distance.
    pub neighbors: Vec<Vec<usize>>,
    /// Fewer than two residues: there are no neighbors and every row is zero.
    pub self_only: bool,
}

impl Features {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn featurize(x: &Structure, hyper: &Hyper) -> Features {
    let n = x.len();
    let dim = hyper.feature_dim();
    let mut values = vec![0.0; n * dim];
    let mut neighbors = Vec::with_capacity(n);
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((x.coords[i] - x.coords[j]).norm(), j))
            .collect();
        others.sort_by_key(|&(d, j)| ((d * 1e6).round() as u64, j));
        others.truncate(hyper.k_neighbors);
        let row = &mut values[i * dim..(i + 1) * dim];
        for &(d, j) in &others {
            let slot = bucket(j as isize - i as isize) * hyper.n_rbf;
            for r in 0..hyper.n_rbf {
                row[slot + r] += rbf(d, r, hyper.n_rbf);
            }
        }
        neighbors.push(others.into_iter().map(|(_, j)| j).collect());
    }
    Features {
        dim,
        values,
        neighbors,
        self_only: n < 2,
    }
}

/// A structure together with its features.
#[derive(Clone, Debug)]
pub struct Featurized {
    pub structure: Structure,
    pub features: Features,
}

impl Featurized {
    pub fn new(structure: Structure, hyper: &Hyper) -> Self {
        let features = featurize(&structure, hyper);
        Self { structure, features }
    }

    pub fn len(&self) -> usize {
        self.structure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.structure.is_empty()
    }
}
