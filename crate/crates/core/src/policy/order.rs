use rand::seq::SliceRandom;

use crate::error::{Error, Result};

/// A permutation of positions: `perm[t]` is decoded at step `t`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DecodingOrder {
    perm: Vec<usize>,
}

impl DecodingOrder {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidInput(format!("{perm:?} is not a permutation")));
            }
        }
        Ok(Self { perm })
    }

    /// Left-to-right order.
    pub fn identity(len: usize) -> Self {
        Self {
            perm: (0..len).collect(),
        }
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// `rank[i]` is the step at which position `i` is decoded.
    pub fn ranks(&self) -> Vec<usize> {
        let mut rank = vec![0; self.perm.len()];
        for (t, &i) in self.perm.iter().enumerate() {
            rank[i] = t;
        }
        rank
    }
}

/// Uniform random permutation of `0..len` (Fisher-Yates).
pub fn sample_order(len: usize, rng: &mut impl rand::Rng) -> DecodingOrder {
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(rng);
    DecodingOrder { perm }
}
