//! Pairwise preference losses and the supervised objective.
//!
//! Every pairwise loss has the form `mean −log σ(Δ)` with
//!
//! ```text
//! Δ = β(log πθ(y_w) − s·log πref(y_w)) − β(log πθ(y_l) − s·log πref(y_l)) + shift
//! ```
//!
//! where `s` is 1 for standard DPO and the prompt's mean reward for the
//! scaled variant, and `shift` carries the (gradient-free) regularizer.
//! θ and the reference share one decoding order per sequence; winner and
//! loser get independent orders.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::policy::{sample_order, DecodingOrder, Encoded, Featurized, Gradient, PolicyParams};
use crate::sequence::{hamming_fraction, Sequence};

/// `−ln σ(z)`, stable for large |z|.
pub fn neg_log_sigmoid(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One preference pair. `prompt_index` locates the prompt in the training
/// set (used for the snapshot sample cache).
#[derive(Clone, Copy, Debug)]
pub struct Pair<'a> {
    pub prompt: &'a Featurized,
    pub prompt_index: usize,
    pub winner: &'a Sequence,
    pub loser: &'a Sequence,
    /// Mean candidate reward of the prompt's record.
    pub mean_reward: f64,
}

/// Decoding orders for one pair: one or more per sequence, shared by every
/// policy that scores that sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct PairOrders {
    pub winner: Vec<DecodingOrder>,
    pub loser: Vec<DecodingOrder>,
}

impl PairOrders {
    pub fn single(winner: DecodingOrder, loser: DecodingOrder) -> Self {
        Self {
            winner: vec![winner],
            loser: vec![loser],
        }
    }

    pub fn draw(len: usize, n_orders: usize, rng: &mut impl Rng) -> Self {
        let winner = (0..n_orders).map(|_| sample_order(len, rng)).collect();
        let loser = (0..n_orders).map(|_| sample_order(len, rng)).collect();
        Self { winner, loser }
    }
}

/// Per-pair modifiers of the margin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adjust {
    pub ref_scale: f64,
    pub shift: f64,
}

impl Default for Adjust {
    fn default() -> Self {
        Self {
            ref_scale: 1.0,
            shift: 0.0,
        }
    }
}

/// Loss value, gradient with respect to θ, and per-pair implicit-reward
/// margins `r_w − r_l` (without the regularizer shift).
#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub gradient: Gradient,
    pub margins: Vec<f64>,
}

/// Mean log-probability over `orders`.
pub(crate) fn mean_logprob(enc: &Encoded, y: &Sequence, orders: &[DecodingOrder]) -> Result<f64> {
    let mut total = 0.0;
    for o in orders {
        total += enc.logprob(y, o)?.total;
    }
    Ok(total / orders.len() as f64)
}

/// `β·(log πθ(y) − log πref(y))` under one shared order.
pub fn implicit_reward(
    theta: &PolicyParams,
    reference: &PolicyParams,
    x: &Featurized,
    y: &Sequence,
    order: &DecodingOrder,
    beta: f64,
) -> Result<f64> {
    theta.check_compatible(reference)?;
    let lt = Encoded::new(theta, &x.features).logprob(y, order)?.total;
    let lr = Encoded::new(reference, &x.features).logprob(y, order)?.total;
    Ok(beta * (lt - lr))
}

struct Term {
    loss: f64,
    margin: f64,
    grad: Vec<f64>,
}

/// Mean log-probability over orders, accumulating its gradient into
/// `grad`/`dhidden` with unit scale.
fn accumulate_mean(
    enc: &Encoded,
    y: &Sequence,
    orders: &[DecodingOrder],
    grad: &mut [f64],
    dhidden: &mut [f64],
) -> Result<f64> {
    let w = 1.0 / orders.len() as f64;
    let mut total = 0.0;
    for o in orders {
        total += enc.accumulate_grad(y, o, w, grad, dhidden)?.total;
    }
    Ok(total / orders.len() as f64)
}

#[allow(clippy::too_many_arguments)]
fn pair_term(
    theta: &PolicyParams,
    reference: &Encoded,
    pair: &Pair,
    orders: &PairOrders,
    beta: f64,
    adjust: Adjust,
    weight: f64,
) -> Result<Term> {
    if orders.winner.is_empty() || orders.loser.is_empty() {
        return Err(Error::InvalidInput("each sequence needs at least one decoding order".into()));
    }
    let enc = Encoded::new(theta, &pair.prompt.features);
    let n = theta.len();
    let dh_len = pair.prompt.len() * theta.hyper().hidden;
    let (mut gw, mut gl) = (vec![0.0; n], vec![0.0; n]);
    let (mut dhw, mut dhl) = (vec![0.0; dh_len], vec![0.0; dh_len]);
    let lw = accumulate_mean(&enc, pair.winner, &orders.winner, &mut gw, &mut dhw)?;
    let ll = accumulate_mean(&enc, pair.loser, &orders.loser, &mut gl, &mut dhl)?;
    let lwr = mean_logprob(reference, pair.winner, &orders.winner)?;
    let llr = mean_logprob(reference, pair.loser, &orders.loser)?;

    let rw = beta * (lw - adjust.ref_scale * lwr);
    let rl = beta * (ll - adjust.ref_scale * llr);
    let margin = rw - rl;
    let delta = margin + adjust.shift;
    let loss = neg_log_sigmoid(delta);
    // dloss/dΔ = −σ(−Δ); dΔ/dlw = β, dΔ/dll = −β
    let g = -sigmoid(-delta) * weight;
    let (cw, cl) = (g * beta, -g * beta);
    for (a, b) in gw.iter_mut().zip(&gl) {
        *a = cw * *a + cl * b;
    }
    for (a, b) in dhw.iter_mut().zip(&dhl) {
        *a = cw * *a + cl * b;
    }
    enc.backprop_hidden(&dhw, &mut gw);
    Ok(Term { loss, margin, grad: gw })
}

/// Shared core of every pairwise loss. `reference(k)` returns the reference
/// encoding for pair `k`.
pub(crate) fn pairwise_core<'r>(
    theta: &PolicyParams,
    reference: impl Fn(usize) -> &'r Encoded<'r> + Sync,
    pairs: &[Pair],
    orders: &[PairOrders],
    beta: f64,
    adjust: &[Adjust],
) -> Result<LossEval> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if orders.len() != pairs.len() || adjust.len() != pairs.len() {
        return Err(Error::Dimension(format!(
            "{} pairs, {} order sets, {} adjustments",
            pairs.len(),
            orders.len(),
            adjust.len()
        )));
    }
    let weight = 1.0 / pairs.len() as f64;
    let terms = (0..pairs.len())
        .into_par_iter()
        .map(|k| pair_term(theta, reference(k), &pairs[k], &orders[k], beta, adjust[k], weight))
        .collect::<Result<Vec<_>>>()?;
    let mut gradient = Gradient::zeros(theta.hyper());
    let mut loss = 0.0;
    let mut margins = Vec::with_capacity(terms.len());
    for t in terms {
        loss += t.loss;
        margins.push(t.margin);
        for (a, b) in gradient.values.iter_mut().zip(&t.grad) {
            *a += b;
        }
    }
    Ok(LossEval {
        loss: loss * weight,
        gradient,
        margins,
    })
}

/// Pairwise loss with explicit per-pair adjustments, against a reference
/// given as parameters.
pub fn pairwise_loss(
    theta: &PolicyParams,
    reference: &PolicyParams,
    pairs: &[Pair],
    orders: &[PairOrders],
    beta: f64,
    adjust: &[Adjust],
) -> Result<LossEval> {
    theta.check_compatible(reference)?;
    let refs: Vec<Encoded> = pairs.iter().map(|p| Encoded::new(reference, &p.prompt.features)).collect();
    pairwise_core(theta, |k| &refs[k], pairs, orders, beta, adjust)
}

/// Standard DPO.
pub fn dpo_loss(
    theta: &PolicyParams,
    reference: &PolicyParams,
    pairs: &[Pair],
    orders: &[PairOrders],
    beta: f64,
) -> Result<LossEval> {
    pairwise_loss(theta, reference, pairs, orders, beta, &vec![Adjust::default(); pairs.len()])
}

pub(crate) fn check_mean_reward(r: f64) -> Result<f64> {
    if r > 0.0 && r <= 1.0 {
        Ok(r)
    } else {
        Err(Error::InvalidInput(format!("mean reward {r} is outside (0, 1]")))
    }
}

/// DPO with reference log-probabilities scaled by each prompt's mean reward.
pub fn scaled_dpo_loss(
    theta: &PolicyParams,
    reference: &PolicyParams,
    pairs: &[Pair],
    orders: &[PairOrders],
    beta: f64,
) -> Result<LossEval> {
    let adjust = pairs
        .iter()
        .map(|p| {
            Ok(Adjust {
                ref_scale: check_mean_reward(p.mean_reward)?,
                shift: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    pairwise_loss(theta, reference, pairs, orders, beta, &adjust)
}

/// Mean Hamming fraction between `y` and the cached snapshot samples.
pub fn diversity_penalty(samples: &[Sequence], y: &Sequence) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("diversity penalty needs at least one cached sample".into()));
    }
    let mut total = 0.0;
    for s in samples {
        total += hamming_fraction(s, y)?;
    }
    Ok(total / samples.len() as f64)
}

/// Mean negative log-likelihood of target sequences, one order per example.
pub fn sft_loss(
    theta: &PolicyParams,
    examples: &[(&Featurized, &Sequence)],
    orders: &[DecodingOrder],
) -> Result<(f64, Gradient)> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if orders.len() != examples.len() {
        return Err(Error::Dimension(format!("{} examples, {} orders", examples.len(), orders.len())));
    }
    let weight = 1.0 / examples.len() as f64;
    let hidden = theta.hyper().hidden;
    let terms = examples
        .par_iter()
        .zip(orders)
        .map(|((x, y), order)| {
            let enc = Encoded::new(theta, &x.features);
            let mut grad = vec![0.0; theta.len()];
            let mut dh = vec![0.0; x.len() * hidden];
            let lp = enc.accumulate_grad(y, order, -weight, &mut grad, &mut dh)?;
            enc.backprop_hidden(&dh, &mut grad);
            Ok((-lp.total, grad))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut gradient = Gradient::zeros(theta.hyper());
    let mut loss = 0.0;
    for (l, g) in terms {
        loss += l;
        for (a, b) in gradient.values.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss * weight, gradient))
}
