use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Prompt;
use crate::error::{Error, Result};
use crate::seeds;
use crate::sequence::Sequence;

/// Fraction of identical positions. Sequences of different length are
/// compared over the shorter length, anchored at position 0; the second
/// value reports whether that happened.
pub fn seq_identity_checked(a: &Sequence, b: &Sequence) -> Result<(f64, bool)> {
    let n = a.len().min(b.len());
    if n == 0 {
        return Err(Error::InvalidInput("sequence identity of an empty sequence".into()));
    }
    let same = a.tokens()[..n]
        .iter()
        .zip(&b.tokens()[..n])
        .filter(|(x, y)| x == y)
        .count();
    Ok((same as f64 / n as f64, a.len() != b.len()))
}

pub fn seq_identity(a: &Sequence, b: &Sequence) -> Result<f64> {
    seq_identity_checked(a, b).map(|(v, _)| v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub test: Vec<String>,
    /// Test candidates dropped for exceeding the identity threshold against train.
    pub discarded: Vec<String>,
    pub identity_threshold: f64,
}

/// Greedy assignment: everything outside `test_candidates` is train; a test
/// candidate is kept only if its native has identity below the threshold
/// with every train native, and is discarded otherwise.
pub fn assign_split(prompts: &[Prompt], test_candidates: &[usize], identity_threshold: f64) -> Result<SplitManifest> {
    let mut is_candidate = vec![false; prompts.len()];
    for &i in test_candidates {
        is_candidate[i] = true;
    }
    let train_idx: Vec<usize> = (0..prompts.len()).filter(|&i| !is_candidate[i]).collect();
    let mut test = Vec::new();
    let mut discarded = Vec::new();
    for &c in test_candidates {
        let mut clean = true;
        for &t in &train_idx {
            if seq_identity(&prompts[c].native, &prompts[t].native)? >= identity_threshold {
                clean = false;
                break;
            }
        }
        if clean {
            test.push(prompts[c].id().to_string());
        } else {
            discarded.push(prompts[c].id().to_string());
        }
    }
    if test.is_empty() {
        return Err(Error::Data(
            "no test prompts survive the identity filter; generate more prompts or raise the threshold".into(),
        ));
    }
    Ok(SplitManifest {
        train: train_idx.iter().map(|&i| prompts[i].id().to_string()).collect(),
        test,
        discarded,
        identity_threshold,
    })
}

/// Random split with identity filtering of the test side.
pub fn make_split(prompts: &[Prompt], identity_threshold: f64, test_fraction: f64, seed: u64) -> Result<SplitManifest> {
    if prompts.is_empty() {
        return Err(Error::Data("cannot split an empty prompt set".into()));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test_fraction {test_fraction} must lie in [0, 1)")));
    }
    let mut idx: Vec<usize> = (0..prompts.len()).collect();
    idx.shuffle(&mut seeds::rng_for(seed, 0));
    let n_test = ((prompts.len() as f64 * test_fraction).round() as usize).max(1);
    if n_test >= prompts.len() {
        return Err(Error::Data("split would leave no training prompts".into()));
    }
    let mut candidates = idx[..n_test].to_vec();
    candidates.sort_unstable();
    assign_split(prompts, &candidates, identity_threshold)
}
