//! Conditional sequence decoder with random decoding order.
//!
//! The encoder maps per-residue geometric features to hidden states with one
//! tanh layer. The decoder scores position `i` from `[h_i ‖ c_i]`, where `c_i`
//! is the mean token embedding of the neighbors of `i` that were decoded
//! before it (zero when none were), through a two-layer tanh MLP.
//!
//! Parameters live in a single flat `f64` buffer; [`Layout`] gives the range
//! of each tensor. All matrices are row-major `out × in`.

mod checkpoint;
mod features;
mod model;
mod order;

use std::ops::Range;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use features::{featurize, rbf, Features, Featurized, OFFSET_BUCKETS, RBF_MAX};
pub use model::{grad_logprob, logprob, sample, sample_encoded, Encoded, LogProbResult};
pub use order::{sample_order, DecodingOrder};

use crate::error::{Error, Result};
use crate::sequence::N_TOKENS;

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyper {
    pub hidden: usize,
    pub k_neighbors: usize,
    pub embed_dim: usize,
    pub n_rbf: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            hidden: 64,
            k_neighbors: 8,
            embed_dim: 16,
            n_rbf: 16,
        }
    }
}

impl Hyper {
    pub fn feature_dim(&self) -> usize {
        OFFSET_BUCKETS * self.n_rbf
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.k_neighbors == 0 || self.embed_dim == 0 || self.n_rbf < 2 {
            return Err(Error::Config(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        let h = self.hidden;
        let e = self.embed_dim;
        let f = self.feature_dim();
        let mut next = 0;
        let mut take = |n: usize| {
            let r = next..next + n;
            next += n;
            r
        };
        let embed = take(N_TOKENS * e);
        let enc_w = take(h * f);
        let enc_b = take(h);
        let dec1_w = take(h * (h + e));
        let dec1_b = take(h);
        let dec2_w = take(N_TOKENS * h);
        let dec2_b = take(N_TOKENS);
        Layout {
            embed,
            enc_w,
            enc_b,
            dec1_w,
            dec1_b,
            dec2_w,
            dec2_b,
            len: next,
        }
    }
}

/// Offsets of each tensor in the flat parameter buffer, in declaration order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    /// Token embeddings, `20 × embed_dim`.
    pub embed: Range<usize>,
    /// Encoder weights, `hidden × feature_dim`.
    pub enc_w: Range<usize>,
    pub enc_b: Range<usize>,
    /// First decoder layer, `hidden × (hidden + embed_dim)`.
    pub dec1_w: Range<usize>,
    pub dec1_b: Range<usize>,
    /// Output layer, `20 × hidden`.
    pub dec2_w: Range<usize>,
    pub dec2_b: Range<usize>,
    pub len: usize,
}

impl Layout {
    /// Tensors in declaration order, with names.
    pub fn tensors(&self) -> [(&'static str, Range<usize>); 7] {
        [
            ("embed", self.embed.clone()),
            ("enc_w", self.enc_w.clone()),
            ("enc_b", self.enc_b.clone()),
            ("dec1_w", self.dec1_w.clone()),
            ("dec1_b", self.dec1_b.clone()),
            ("dec2_w", self.dec2_w.clone()),
            ("dec2_b", self.dec2_b.clone()),
        ]
    }

    fn is_bias(&self, idx: usize) -> bool {
        self.enc_b.contains(&idx) || self.dec1_b.contains(&idx) || self.dec2_b.contains(&idx)
    }
}

/// All learnable parameters of the decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    hyper: Hyper,
    values: Vec<f64>,
}

/// Weight-initialization scale.
pub const INIT_STD: f64 = 0.02;

impl PolicyParams {
    /// All parameters zero: every position decodes to the uniform distribution.
    pub fn zeros(hyper: Hyper) -> Self {
        Self {
            hyper,
            values: vec![0.0; hyper.layout().len],
        }
    }

    /// Weights and embeddings from N(0, 0.02²); biases zero.
    pub fn init(hyper: Hyper, rng: &mut impl rand::Rng) -> Self {
        let layout = hyper.layout();
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        let values = (0..layout.len)
            .map(|i| if layout.is_bias(i) { 0.0 } else { normal.sample(rng) })
            .collect();
        Self { hyper, values }
    }

    pub fn from_values(hyper: Hyper, values: Vec<f64>) -> Result<Self> {
        let expected = hyper.layout().len;
        if values.len() != expected {
            return Err(Error::Dimension(format!(
                "expected {expected} parameters, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        Ok(Self { hyper, values })
    }

    pub fn hyper(&self) -> Hyper {
        self.hyper
    }

    pub fn layout(&self) -> Layout {
        self.hyper.layout()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn slice(&self, r: &Range<usize>) -> &[f64] {
        &self.values[r.clone()]
    }

    /// Fails unless `other` has the same architecture.
    pub fn check_compatible(&self, other: &PolicyParams) -> Result<()> {
        if self.hyper != other.hyper {
            return Err(Error::Dimension(format!(
                "incompatible architectures {:?} and {:?}",
                self.hyper, other.hyper
            )));
        }
        Ok(())
    }

    /// SHA-256 over the little-endian bytes of every parameter.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// A gradient with the same layout as the parameters it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub hyper: Hyper,
    pub values: Vec<f64>,
}

impl Gradient {
    pub fn zeros(hyper: Hyper) -> Self {
        Self {
            hyper,
            values: vec![0.0; hyper.layout().len],
        }
    }

    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }
}
