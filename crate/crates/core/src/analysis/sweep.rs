use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::eval::{evaluate, EvalReport};
use crate::analysis::metrics::rank_correlation;
use crate::dataset::{PreferenceRecord, Prompt};
use crate::error::{Error, Result};
use crate::policy::{sample_order, Encoded, Featurized, PolicyParams};
use crate::seeds::rng_for;

/// A policy to sweep, labeled for the output table.
#[derive(Clone, Copy, Debug)]
pub struct SweepPolicy<'a> {
    pub variant: &'a str,
    pub alpha: f64,
    pub params: &'a PolicyParams,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub variant: String,
    pub alpha: f64,
    pub temperature: f64,
    pub mean_tm: f64,
    pub mean_diversity: f64,
    /// Not dominated in (mean_tm, mean_diversity) by any other point of the sweep.
    pub pareto_flag: bool,
}

/// Marks points not dominated by any other: `q` dominates `p` when it is at
/// least as good in both coordinates and strictly better in one.
pub fn pareto_front(points: &[(f64, f64)]) -> Vec<bool> {
    points
        .iter()
        .map(|p| {
            !points
                .iter()
                .any(|q| q.0 >= p.0 && q.1 >= p.1 && (q.0 > p.0 || q.1 > p.1))
        })
        .collect()
}

/// Evaluates every policy at every temperature (same sampling seed throughout)
/// and annotates the Pareto front over all points.
pub fn sweep(
    policies: &[SweepPolicy],
    prompts: &[Prompt],
    temperatures: &[f64],
    n_samples: usize,
    fixed_order: bool,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if temperatures.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one temperature".into()));
    }
    if let Some(t) = temperatures.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidInput(format!("sweep temperature {t} outside [0, 1]")));
    }
    let mut points = Vec::with_capacity(policies.len() * temperatures.len());
    for p in policies {
        for &t in temperatures {
            let rep = evaluate(p.params, prompts, n_samples, t, fixed_order, seed)?;
            points.push(SweepPoint {
                variant: p.variant.to_string(),
                alpha: p.alpha,
                temperature: t,
                mean_tm: rep.summary.mean_tm.mean,
                mean_diversity: rep.summary.diversity.mean,
                pareto_flag: false,
            });
        }
    }
    let flags = pareto_front(&points.iter().map(|p| (p.mean_tm, p.mean_diversity)).collect::<Vec<_>>());
    for (p, f) in points.iter_mut().zip(flags) {
        p.pareto_flag = f;
    }
    Ok(points)
}

pub const SWEEP_HEADER: &str = "variant,alpha,temperature,mean_tm,mean_diversity,pareto_flag";

pub fn write_sweep_csv<W: Write>(mut w: W, points: &[SweepPoint]) -> Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.variant,
            p.alpha,
            p.temperature,
            p.mean_tm,
            p.mean_diversity,
            u8::from(p.pareto_flag)
        )?;
    }
    Ok(())
}

/// Mean `TM_A − TM_B` over the prompts whose mean candidate reward falls in
/// `[lo, hi)` (the last bucket includes 1).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BucketDelta {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub mean_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BucketReport {
    pub buckets: Vec<BucketDelta>,
    /// Buckets without prompts, omitted from `buckets`.
    pub empty: Vec<(f64, f64)>,
}

pub fn bucket_tm_delta(records: &[PreferenceRecord], a: &EvalReport, b: &EvalReport, edges: &[f64]) -> Result<BucketReport> {
    if edges.len() < 2 || edges[0] != 0.0 || edges[edges.len() - 1] != 1.0 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(format!("bucket edges {edges:?} must increase from 0 to 1")));
    }
    if a.rows.len() != b.rows.len() || a.rows.iter().zip(&b.rows).any(|(x, y)| x.structure_id != y.structure_id) {
        return Err(Error::Data("reports cover different prompts".into()));
    }
    let r: HashMap<&str, f64> = records.iter().map(|r| (r.structure_id.as_str(), r.mean_reward)).collect();
    let n_buckets = edges.len() - 1;
    let mut sums = vec![(0.0, 0usize); n_buckets];
    for (x, y) in a.rows.iter().zip(&b.rows) {
        let rx = *r
            .get(x.structure_id.as_str())
            .ok_or_else(|| Error::Data(format!("no record for {}", x.structure_id)))?;
        let k = edges[1..n_buckets].iter().take_while(|&&e| rx >= e).count();
        sums[k].0 += x.mean_tm - y.mean_tm;
        sums[k].1 += 1;
    }
    let mut report = BucketReport {
        buckets: Vec::new(),
        empty: Vec::new(),
    };
    for (k, (sum, n)) in sums.into_iter().enumerate() {
        let (lo, hi) = (edges[k], edges[k + 1]);
        if n == 0 {
            report.empty.push((lo, hi));
        } else {
            report.buckets.push(BucketDelta {
                lo,
                hi,
                n,
                mean_delta: sum / n as f64,
            });
        }
    }
    Ok(report)
}

/// Per-prompt Spearman ρ between candidate log-probabilities (one random
/// order each) and candidate rewards. `None` where ρ is undefined (ties).
pub fn logprob_reward_correlation(
    params: &PolicyParams,
    records: &[PreferenceRecord],
    prompts: &[Prompt],
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    let by_id: HashMap<&str, &Prompt> = prompts.iter().map(|p| (p.id(), p)).collect();
    let hyper = params.hyper();
    records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let p = by_id
                .get(rec.structure_id.as_str())
                .ok_or_else(|| Error::Data(format!("no structure for record {}", rec.structure_id)))?;
            let f = Featurized::new(p.structure.clone(), &hyper);
            let enc = Encoded::new(params, &f.features);
            let mut rng = rng_for(seed, i as u64);
            let lps = rec
                .candidates
                .iter()
                .map(|c| Ok(enc.logprob(&c.sequence, &sample_order(f.len(), &mut rng))?.total))
                .collect::<Result<Vec<_>>>()?;
            let rewards: Vec<f64> = rec.candidates.iter().map(|c| c.reward).collect();
            match rank_correlation(&lps, &rewards) {
                Ok(rho) => Ok(Some(rho)),
                Err(Error::Undefined(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}
