//! Seed derivation.
//!
//! Every stage of a run gets its own 64-bit seed derived from the master seed:
//!
//! ```text
//! derive(seed, stream) = splitmix64(seed + (stream + 1) * 0x9E3779B97F4A7C15)
//! ```
//!
//! with wrapping arithmetic. `splitmix64` is the standard finalizer
//! (shifts 30/27/31, multipliers 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB).
//! Stage streams are fixed constants listed in [`Stage`]; per-item streams
//! (one per prompt, batch item, ...) are derived from the stage seed with
//! the item index as the stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, stream: u64) -> u64 {
    splitmix64(seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(GOLDEN)))
}

pub fn rng_for(seed: u64, stream: u64) -> Rng {
    Rng::seed_from_u64(derive(seed, stream))
}

/// Fixed stream identifiers for pipeline stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stage {
    Prompts = 1,
    Split = 2,
    Init = 3,
    Pretrain = 4,
    Preferences = 5,
    Sft = 6,
    Train = 7,
    Eval = 8,
    Sweep = 9,
    Entropy = 10,
    PretrainPrompts = 11,
}

impl Stage {
    pub fn seed(self, master: u64) -> u64 {
        derive(master, self as u64)
    }
}
