use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::policy::{sample_order, DecodingOrder, Encoded, Featurized, PolicyParams};
use crate::seeds::rng_for;
use crate::sequence::Sequence;

/// Monte-Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_err = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            f64::NAN
        };
        Self { mean, std_err, n }
    }
}

/// `KL(πθ ‖ πref)` estimated from `n_samples` draws of `y ~ πθ` per prompt
/// (temperature one, random order), each scored under both policies with
/// the order it was sampled in. Prompt `i` uses stream `i` of `seed`.
pub fn kl_estimate(
    theta: &PolicyParams,
    reference: &PolicyParams,
    prompts: &[Featurized],
    n_samples: usize,
    seed: u64,
) -> Result<Estimate> {
    theta.check_compatible(reference)?;
    if n_samples == 0 || prompts.is_empty() {
        return Err(Error::InvalidInput("KL estimate needs at least one prompt and one sample".into()));
    }
    let per_prompt = prompts
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = rng_for(seed, i as u64);
            let et = Encoded::new(theta, &x.features);
            let er = Encoded::new(reference, &x.features);
            (0..n_samples)
                .map(|_| {
                    let (y, lp) = et.sample(1.0, &mut rng, false)?;
                    Ok(lp.total - er.logprob(&y, &lp.order)?.total)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Estimate::from_values(&per_prompt.concat()))
}

/// Per-token sampling entropy: `−mean log π(y)/L` over `n_samples` draws
/// per prompt at temperature one.
pub fn token_entropy(params: &PolicyParams, prompts: &[Featurized], n_samples: usize, seed: u64) -> Result<Estimate> {
    if n_samples == 0 || prompts.is_empty() {
        return Err(Error::InvalidInput("token entropy needs at least one prompt and one sample".into()));
    }
    let values = prompts
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = rng_for(seed, i as u64);
            let enc = Encoded::new(params, &x.features);
            (0..n_samples)
                .map(|_| {
                    let (y, lp) = enc.sample(1.0, &mut rng, false)?;
                    Ok(-lp.total / y.len() as f64)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Estimate::from_values(&values.concat()))
}

/// Differential entropy of a one-dimensional sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiffEntropy {
    /// `-inf` when collapsed.
    pub value: f64,
    /// Fewer than two distinct values: the distribution is a point mass.
    pub collapsed: bool,
}

fn digamma_int(k: usize) -> f64 {
    // ψ(k) = H_{k−1} − γ for integer k ≥ 1
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    (1..k).map(|j| 1.0 / j as f64).sum::<f64>() - EULER_GAMMA
}

/// Vasicek spacing estimate with window `m = round(√n)` and the
/// Wieczorkowski–Grzegorzewski bias correction:
///
/// ```text
/// H = (1/n) Σ ln(x_(i+m) − x_(i−m)) − (1 − 2m/n) ψ(2m) + ψ(n+1) − (2/n) Σ_{i=1..m} ψ(i+m−1)
/// ```
///
/// with order statistics clamped to `x_(1)` and `x_(n)` at the ends.
pub fn vasicek(samples: &[f64]) -> Result<DiffEntropy> {
    let n = samples.len();
    if n < 2 || samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("entropy estimate needs at least 2 finite values".into()));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    if x[0] == x[n - 1] {
        return Ok(DiffEntropy {
            value: f64::NEG_INFINITY,
            collapsed: true,
        });
    }
    let m = ((n as f64).sqrt().round() as usize).clamp(1, n - 1);
    let spacing_sum: f64 = (0..n)
        .map(|i| {
            let hi = x[(i + m).min(n - 1)];
            let lo = x[i.saturating_sub(m)];
            (hi - lo).ln()
        })
        .sum();
    let nf = n as f64;
    let correction = -(1.0 - 2.0 * m as f64 / nf) * digamma_int(2 * m) + digamma_int(n + 1)
        - 2.0 / nf * (1..=m).map(|i| digamma_int(i + m - 1)).sum::<f64>();
    Ok(DiffEntropy {
        value: spacing_sum / nf + correction,
        collapsed: false,
    })
}

/// Log-probabilities of `y` under `n_orders` decoding orders (all identity
/// when `fixed_order`).
pub fn order_logprobs(
    params: &PolicyParams,
    x: &Featurized,
    y: &Sequence,
    n_orders: usize,
    rng: &mut impl Rng,
    fixed_order: bool,
) -> Result<Vec<f64>> {
    let enc = Encoded::new(params, &x.features);
    (0..n_orders)
        .map(|_| {
            let order = if fixed_order {
                DecodingOrder::identity(x.len())
            } else {
                sample_order(x.len(), rng)
            };
            Ok(enc.logprob(y, &order)?.total)
        })
        .collect()
}

/// Differential entropy of `log π(y|x)` over random decoding orders.
pub fn diff_entropy(
    params: &PolicyParams,
    x: &Featurized,
    y: &Sequence,
    n_orders: usize,
    rng: &mut impl Rng,
    fixed_order: bool,
) -> Result<DiffEntropy> {
    if n_orders < 8 {
        return Err(Error::InvalidInput(format!("need at least 8 decoding orders, got {n_orders}")));
    }
    vasicek(&order_logprobs(params, x, y, n_orders, rng, fixed_order)?)
}
