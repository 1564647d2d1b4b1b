use std::io::{BufRead, Write};
use std::ops::RangeInclusive;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fold, Structure};
use crate::seeds;
use crate::sequence::{Sequence, N_TOKENS};

/// A target structure with the sequence it was folded from.
#[derive(Clone, Debug, PartialEq)]
pub struct Prompt {
    pub structure: Structure,
    pub native: Sequence,
}

impl Prompt {
    pub fn id(&self) -> &str {
        &self.structure.id
    }
}

/// Generates `n` prompts with uniformly random natives of length drawn from
/// `lengths`. Prompt `i` uses its own stream derived from `seed`, and is
/// named `{prefix}{i:05}`.
pub fn gen_prompts(n: usize, lengths: RangeInclusive<usize>, seed: u64, prefix: &str) -> Result<Vec<Prompt>> {
    if *lengths.start() < 2 || *lengths.end() > 50 || lengths.is_empty() {
        return Err(Error::Config(format!(
            "prompt lengths {}..={} must lie within 2..=50",
            lengths.start(),
            lengths.end()
        )));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds::rng_for(seed, i as u64);
            let len = rng.random_range(lengths.clone());
            let tokens = (0..len).map(|_| rng.random_range(0..N_TOKENS) as u8).collect();
            let native = Sequence::from_indices(tokens)?;
            let mut structure = fold(&native)?;
            structure.id = format!("{prefix}{i:05}");
            Ok(Prompt { structure, native })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct PromptLine {
    structure_id: String,
    native: Sequence,
}

/// One JSON object per line: `{"structure_id": ..., "native": ...}`.
pub fn write_prompts<W: Write>(mut w: W, prompts: &[Prompt]) -> Result<()> {
    for p in prompts {
        let line = PromptLine {
            structure_id: p.id().to_string(),
            native: p.native.clone(),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::Data(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads prompt lines and attaches the matching structures by id.
pub fn read_prompts<R: BufRead>(r: R, structures: &[Structure]) -> Result<Vec<Prompt>> {
    let by_id: std::collections::HashMap<&str, &Structure> =
        structures.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PromptLine = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("line {}: {e}", lineno + 1)))?;
        let structure = by_id
            .get(p.structure_id.as_str())
            .ok_or_else(|| Error::Data(format!("line {}: no structure named {}", lineno + 1, p.structure_id)))?;
        if structure.len() != p.native.len() {
            return Err(Error::Data(format!(
                "line {}: native length {} does not match structure length {}",
                lineno + 1,
                p.native.len(),
                structure.len()
            )));
        }
        out.push(Prompt {
            structure: (*structure).clone(),
            native: p.native,
        });
    }
    Ok(out)
}
