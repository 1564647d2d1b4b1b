//! Preference optimization for random-order sequence decoders, with a
//! synthetic inverse-folding testbed.
//!
//! * [`geometry`]: torsion-table fold oracle, Kabsch superposition, TM-score reward.
//! * [`policy`]: the conditional decoder with random decoding order.
//! * [`dataset`]: prompt generation, identity-filtered splits, preference pairs.
//! * [`train`]: SFT and the DPO family (standard, reward-scaled, diversity- and
//!   entropy-regularized).
//! * [`analysis`]: evaluation metrics, entropy and KL estimators, sweeps.
//! * [`pipeline`]: end-to-end orchestration shared by the CLI and tests.

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod pipeline;
pub mod policy;
pub mod seeds;
pub mod train;
pub mod sequence;

pub use error::{Error, Result};
pub use geometry::Structure;
pub use policy::{DecodingOrder, PolicyParams};
pub use sequence::Sequence;
