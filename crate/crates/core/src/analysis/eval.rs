use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::estimators::Estimate;
use crate::analysis::metrics::{best_of_n_recovery, diversity, recovery};
use crate::dataset::Prompt;
use crate::error::{Error, Result};
use crate::geometry::reward;
use crate::policy::{Encoded, Featurized, PolicyParams};
use crate::seeds::rng_for;
use crate::sequence::Sequence;

/// Per-prompt evaluation results.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub structure_id: String,
    pub mean_tm: f64,
    pub diversity: f64,
    /// Mean recovery over samples.
    pub recovery: f64,
    /// `best_of_n[k]` is the best recovery among the first `k + 1` samples.
    pub best_of_n: Vec<f64>,
    pub tm: Vec<f64>,
    pub samples: Vec<Sequence>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    pub temperature: f64,
    pub n_samples: usize,
    pub fixed_order: bool,
    pub n_prompts: usize,
    pub mean_tm: Estimate,
    pub diversity: Estimate,
    pub recovery: Estimate,
    pub best_of_n: Vec<Estimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub rows: Vec<EvalRow>,
}

/// Samples `n_samples` sequences per prompt at `temperature` and scores them.
/// Prompt `i` uses stream `i` of `seed`.
pub fn evaluate(
    params: &PolicyParams,
    prompts: &[Prompt],
    n_samples: usize,
    temperature: f64,
    fixed_order: bool,
    seed: u64,
) -> Result<EvalReport> {
    if prompts.is_empty() {
        return Err(Error::InvalidInput("evaluation needs at least one prompt".into()));
    }
    if n_samples < 2 {
        return Err(Error::InvalidInput(format!(
            "evaluation needs at least 2 samples per prompt for diversity, got {n_samples}"
        )));
    }
    let hyper = params.hyper();
    let rows = prompts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = rng_for(seed, i as u64);
            let f = Featurized::new(p.structure.clone(), &hyper);
            let enc = Encoded::new(params, &f.features);
            let samples = (0..n_samples)
                .map(|_| enc.sample(temperature, &mut rng, fixed_order).map(|(y, _)| y))
                .collect::<Result<Vec<_>>>()?;
            let tm = samples.iter().map(|y| reward(&p.structure, y)).collect::<Result<Vec<_>>>()?;
            let rec = samples.iter().map(|y| recovery(&p.native, y)).collect::<Result<Vec<_>>>()?;
            let best_of_n = (1..=n_samples)
                .map(|k| best_of_n_recovery(&p.native, &samples[..k]))
                .collect::<Result<Vec<_>>>()?;
            Ok(EvalRow {
                structure_id: p.id().to_string(),
                mean_tm: tm.iter().sum::<f64>() / n_samples as f64,
                diversity: diversity(&samples)?,
                recovery: rec.iter().sum::<f64>() / n_samples as f64,
                best_of_n,
                tm,
                samples,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_rows(rows, temperature, n_samples, fixed_order))
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>, temperature: f64, n_samples: usize, fixed_order: bool) -> Self {
        let col = |f: &dyn Fn(&EvalRow) -> f64| Estimate::from_values(&rows.iter().map(f).collect::<Vec<_>>());
        let best_of_n = (0..n_samples).map(|k| col(&|r| r.best_of_n[k])).collect();
        let summary = EvalSummary {
            temperature,
            n_samples,
            fixed_order,
            n_prompts: rows.len(),
            mean_tm: col(&|r| r.mean_tm),
            diversity: col(&|r| r.diversity),
            recovery: col(&|r| r.recovery),
            best_of_n,
        };
        Self { summary, rows }
    }

    /// One row per prompt plus a final `aggregate` row of means. Samples are
    /// joined with `|`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.summary.n_samples;
        let best: Vec<String> = (1..=n).map(|k| format!("best_of_{k}")).collect();
        writeln!(w, "structure_id,mean_tm,diversity,recovery,{},samples", best.join(","))?;
        for r in &self.rows {
            let b: Vec<String> = r.best_of_n.iter().map(f64::to_string).collect();
            let s: Vec<String> = r.samples.iter().map(Sequence::to_string).collect();
            writeln!(w, "{},{},{},{},{},{}", r.structure_id, r.mean_tm, r.diversity, r.recovery, b.join(","), s.join("|"))?;
        }
        let s = &self.summary;
        let b: Vec<String> = s.best_of_n.iter().map(|e| e.mean.to_string()).collect();
        writeln!(w, "aggregate,{},{},{},{},", s.mean_tm.mean, s.diversity.mean, s.recovery.mean, b.join(","))?;
        Ok(())
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}
