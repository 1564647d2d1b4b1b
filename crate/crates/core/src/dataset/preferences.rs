use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Prompt;
use crate::error::{Error, Result};
use crate::geometry::reward;
use crate::policy::{Encoded, Featurized, PolicyParams};
use crate::seeds;
use crate::sequence::Sequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub sequence: Sequence,
    pub reward: f64,
}

/// One prompt with its scored candidates and the preference pairs they induce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub structure_id: String,
    pub native: Sequence,
    pub candidates: Vec<Candidate>,
    /// Arithmetic mean of the candidate rewards.
    pub mean_reward: f64,
    /// `(winner, loser)` candidate indices; the winner's reward is strictly greater.
    pub pairs: Vec<(usize, usize)>,
}

/// Rewards are stored with 9 decimal digits.
pub fn quantize_reward(r: f64) -> f64 {
    (r * 1e9).round() / 1e9
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Builds a record from raw candidate rewards: rewards are quantized, pairs
/// are formed for every strictly ordered candidate pair (ties produce none).
pub fn build_record(structure_id: &str, native: &Sequence, candidates: Vec<(Sequence, f64)>) -> PreferenceRecord {
    let candidates: Vec<Candidate> = candidates
        .into_iter()
        .map(|(sequence, r)| Candidate {
            sequence,
            reward: quantize_reward(r),
        })
        .collect();
    let mut pairs = Vec::new();
    for i in 0..candidates.len() {
        for j in i + 1..candidates.len() {
            let (ri, rj) = (candidates[i].reward, candidates[j].reward);
            if ri > rj {
                pairs.push((i, j));
            } else if rj > ri {
                pairs.push((j, i));
            }
        }
    }
    PreferenceRecord {
        structure_id: structure_id.to_string(),
        native: native.clone(),
        mean_reward: mean(candidates.iter().map(|c| c.reward)),
        candidates,
        pairs,
    }
}

impl PreferenceRecord {
    pub fn k(&self) -> usize {
        self.candidates.len()
    }

    /// Checks every record invariant; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Data(format!("record {}: field `{field}`: {msg}", self.structure_id)));
        if self.candidates.len() < 2 {
            return bad("candidates", format!("need at least 2 candidates, got {}", self.candidates.len()));
        }
        for (k, c) in self.candidates.iter().enumerate() {
            if !(c.reward > 0.0 && c.reward <= 1.0) {
                return bad(&format!("candidates[{k}].reward"), format!("{} is outside (0, 1]", c.reward));
            }
            if c.sequence.len() != self.native.len() {
                return bad(&format!("candidates[{k}].sequence"), "length differs from native".into());
            }
        }
        let r = mean(self.candidates.iter().map(|c| c.reward));
        if (r - self.mean_reward).abs() > 1e-12 {
            return bad("mean_reward", format!("{} is not the candidate mean {r}", self.mean_reward));
        }
        let mut expected = 0;
        for i in 0..self.k() {
            for j in i + 1..self.k() {
                if self.candidates[i].reward != self.candidates[j].reward {
                    expected += 1;
                }
            }
        }
        if self.pairs.len() != expected {
            return bad("pairs", format!("expected {expected} strict pairs, found {}", self.pairs.len()));
        }
        let mut seen = std::collections::HashSet::new();
        for &(w, l) in &self.pairs {
            if w >= self.k() || l >= self.k() {
                return bad("pairs", format!("index pair ({w}, {l}) out of range"));
            }
            if self.candidates[w].reward <= self.candidates[l].reward {
                return bad("pairs", format!("winner {w} does not beat loser {l}"));
            }
            if !seen.insert((w.min(l), w.max(l))) {
                return bad("pairs", format!("duplicate pair ({w}, {l})"));
            }
        }
        Ok(())
    }
}

/// Samples `k` candidates per prompt at `temperature` (random decoding
/// order), scores them with the structural reward and builds records.
/// Prompt `i` samples from its own stream derived from `seed`; output is
/// sorted by structure id.
pub fn gen_preferences(
    policy: &PolicyParams,
    prompts: &[Prompt],
    k: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<PreferenceRecord>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 candidates per prompt, got {k}")));
    }
    let hyper = policy.hyper();
    let mut records = prompts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = seeds::rng_for(seed, i as u64);
            let f = Featurized::new(p.structure.clone(), &hyper);
            let enc = Encoded::new(policy, &f.features);
            let mut cands = Vec::with_capacity(k);
            for _ in 0..k {
                let (y, _) = enc.sample(temperature, &mut rng, false)?;
                let r = reward(&p.structure, &y)?;
                cands.push((y, r));
            }
            Ok(build_record(p.id(), &p.native, cands))
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.structure_id.cmp(&b.structure_id));
    Ok(records)
}
