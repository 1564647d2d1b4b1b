//! Forward pass, reverse-mode gradient and sampling for the decoder.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Structure;
use crate::policy::{featurize, sample_order, DecodingOrder, Features, Gradient, Layout, PolicyParams};
use crate::sequence::{Sequence, N_TOKENS};

/// Log-probability of a sequence under one decoding order.
#[derive(Clone, Debug, PartialEq)]
pub struct LogProbResult {
    pub total: f64,
    /// Log-probability of the token at each position (indexed by position, not step).
    pub per_position: Vec<f64>,
    pub order: DecodingOrder,
}

impl LogProbResult {
    fn from_positions(per_position: Vec<f64>, order: DecodingOrder) -> Self {
        Self {
            total: per_position.iter().sum(),
            per_position,
            order,
        }
    }
}

/// Encoder output for one structure under one parameter set. Reused across
/// every sequence and decoding order evaluated against the same structure.
pub struct Encoded<'a> {
    params: &'a PolicyParams,
    features: &'a Features,
    layout: Layout,
    hidden: Vec<f64>,
}

/// Scratch buffers for one position.
struct Scratch {
    input: Vec<f64>,
    act: Vec<f64>,
    logits: Vec<f64>,
}

impl<'a> Encoded<'a> {
    pub fn new(params: &'a PolicyParams, features: &'a Features) -> Self {
        let hyper = params.hyper();
        let layout = hyper.layout();
        let (h, f) = (hyper.hidden, hyper.feature_dim());
        debug_assert_eq!(features.dim, f);
        let w = params.slice(&layout.enc_w);
        let b = params.slice(&layout.enc_b);
        let mut hidden = vec![0.0; features.len() * h];
        for i in 0..features.len() {
            let x = features.row(i);
            for (r, out) in hidden[i * h..(i + 1) * h].iter_mut().enumerate() {
                *out = (b[r] + dot(&w[r * f..(r + 1) * f], x)).tanh();
            }
        }
        Self {
            params,
            features,
            layout,
            hidden,
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn params(&self) -> &PolicyParams {
        self.params
    }

    fn scratch(&self) -> Scratch {
        let hyper = self.params.hyper();
        Scratch {
            input: vec![0.0; hyper.hidden + hyper.embed_dim],
            act: vec![0.0; hyper.hidden],
            logits: vec![0.0; N_TOKENS],
        }
    }

    /// Fills `input = [h_i ‖ mean embedding of decoded neighbors]` and returns
    /// the number of decoded neighbors.
    fn fill_input(&self, i: usize, input: &mut [f64], decoded: impl Fn(usize) -> Option<u8>) -> usize {
        let hyper = self.params.hyper();
        let (h, e) = (hyper.hidden, hyper.embed_dim);
        input[..h].copy_from_slice(&self.hidden[i * h..(i + 1) * h]);
        let ctx = &mut input[h..];
        ctx.fill(0.0);
        let embed = self.params.slice(&self.layout.embed);
        let mut count = 0;
        for &j in &self.features.neighbors[i] {
            if let Some(tok) = decoded(j) {
                let row = &embed[tok as usize * e..(tok as usize + 1) * e];
                for (c, v) in ctx.iter_mut().zip(row) {
                    *c += v;
                }
                count += 1;
            }
        }
        if count > 1 {
            let inv = 1.0 / count as f64;
            ctx.iter_mut().for_each(|c| *c *= inv);
        }
        count
    }

    fn forward(&self, s: &mut Scratch) {
        let hyper = self.params.hyper();
        let (h, n_in) = (hyper.hidden, hyper.hidden + hyper.embed_dim);
        let w1 = self.params.slice(&self.layout.dec1_w);
        let b1 = self.params.slice(&self.layout.dec1_b);
        for r in 0..h {
            s.act[r] = (b1[r] + dot(&w1[r * n_in..(r + 1) * n_in], &s.input)).tanh();
        }
        let w2 = self.params.slice(&self.layout.dec2_w);
        let b2 = self.params.slice(&self.layout.dec2_b);
        for t in 0..N_TOKENS {
            s.logits[t] = b2[t] + dot(&w2[t * h..(t + 1) * h], &s.act);
        }
    }

    fn check_len(&self, y: &Sequence, order: &DecodingOrder) -> Result<()> {
        if y.len() != self.len() || order.len() != self.len() {
            return Err(Error::Dimension(format!(
                "structure has {} residues, sequence {}, order {}",
                self.len(),
                y.len(),
                order.len()
            )));
        }
        Ok(())
    }

    /// Teacher-forced log-probability of `y` decoded in `order`.
    pub fn logprob(&self, y: &Sequence, order: &DecodingOrder) -> Result<LogProbResult> {
        self.check_len(y, order)?;
        let ranks = order.ranks();
        let tokens = y.tokens();
        let mut s = self.scratch();
        let per_position = (0..self.len())
            .map(|i| {
                self.fill_input(i, &mut s.input, |j| (ranks[j] < ranks[i]).then(|| tokens[j]));
                self.forward(&mut s);
                s.logits[tokens[i] as usize] - log_sum_exp(&s.logits)
            })
            .collect();
        Ok(LogProbResult::from_positions(per_position, order.clone()))
    }

    /// Adds `scale · ∇ total` for the decoder and embedding parameters into
    /// `grad`, and `scale · ∂total/∂hidden` into `dhidden`. Call
    /// [`Encoded::backprop_hidden`] once all contributions are in.
    pub fn accumulate_grad(
        &self,
        y: &Sequence,
        order: &DecodingOrder,
        scale: f64,
        grad: &mut [f64],
        dhidden: &mut [f64],
    ) -> Result<LogProbResult> {
        self.check_len(y, order)?;
        let hyper = self.params.hyper();
        let (h, e, n_in) = (hyper.hidden, hyper.embed_dim, hyper.hidden + hyper.embed_dim);
        let layout = &self.layout;
        let w1 = self.params.slice(&layout.dec1_w);
        let w2 = self.params.slice(&layout.dec2_w);
        let ranks = order.ranks();
        let tokens = y.tokens();
        let mut s = self.scratch();
        let mut g_act = vec![0.0; h];
        let mut g_input = vec![0.0; n_in];
        let mut per_position = Vec::with_capacity(self.len());

        for i in 0..self.len() {
            let n_ctx = self.fill_input(i, &mut s.input, |j| (ranks[j] < ranks[i]).then(|| tokens[j]));
            self.forward(&mut s);
            let lse = log_sum_exp(&s.logits);
            let target = tokens[i] as usize;
            per_position.push(s.logits[target] - lse);

            // d logp / d logits = onehot - softmax
            for (t, l) in s.logits.iter_mut().enumerate() {
                let p = (*l - lse).exp();
                *l = scale * (f64::from(u8::from(t == target)) - p);
            }
            let g_logits = &s.logits;
            g_act.fill(0.0);
            {
                let (gw2, rest) = grad[layout.dec2_w.start..].split_at_mut(layout.dec2_w.len());
                let gb2 = &mut rest[layout.dec2_b.start - layout.dec2_w.end..][..N_TOKENS];
                for t in 0..N_TOKENS {
                    let g = g_logits[t];
                    gb2[t] += g;
                    let row = &w2[t * h..(t + 1) * h];
                    axpy(&mut gw2[t * h..(t + 1) * h], g, &s.act);
                    axpy(&mut g_act, g, row);
                }
            }
            for (g, a) in g_act.iter_mut().zip(&s.act) {
                *g *= 1.0 - a * a;
            }
            g_input.fill(0.0);
            {
                let gw1 = &mut grad[layout.dec1_w.clone()];
                for r in 0..h {
                    let g = g_act[r];
                    axpy(&mut gw1[r * n_in..(r + 1) * n_in], g, &s.input);
                    axpy(&mut g_input, g, &w1[r * n_in..(r + 1) * n_in]);
                }
                let gb1 = &mut grad[layout.dec1_b.clone()];
                for (b, g) in gb1.iter_mut().zip(&g_act) {
                    *b += g;
                }
            }
            for (d, g) in dhidden[i * h..(i + 1) * h].iter_mut().zip(&g_input[..h]) {
                *d += g;
            }
            if n_ctx > 0 {
                let inv = 1.0 / n_ctx as f64;
                let gembed = &mut grad[layout.embed.clone()];
                for &j in &self.features.neighbors[i] {
                    if ranks[j] < ranks[i] {
                        let tok = tokens[j] as usize;
                        axpy(&mut gembed[tok * e..(tok + 1) * e], inv, &g_input[h..]);
                    }
                }
            }
        }
        Ok(LogProbResult::from_positions(per_position, order.clone()))
    }

    /// Backpropagates accumulated hidden-state gradients into the encoder weights.
    pub fn backprop_hidden(&self, dhidden: &[f64], grad: &mut [f64]) {
        let hyper = self.params.hyper();
        let (h, f) = (hyper.hidden, hyper.feature_dim());
        let layout = &self.layout;
        for i in 0..self.len() {
            let x = self.features.row(i);
            for r in 0..h {
                let a = self.hidden[i * h + r];
                let g = dhidden[i * h + r] * (1.0 - a * a);
                if g != 0.0 {
                    grad[layout.enc_b.start + r] += g;
                    let start = layout.enc_w.start + r * f;
                    axpy(&mut grad[start..start + f], g, x);
                }
            }
        }
    }

    /// Exact gradient of the total log-probability.
    pub fn grad_logprob(&self, y: &Sequence, order: &DecodingOrder) -> Result<(LogProbResult, Gradient)> {
        let hyper = self.params.hyper();
        let mut grad = Gradient::zeros(hyper);
        let mut dhidden = vec![0.0; self.len() * hyper.hidden];
        let lp = self.accumulate_grad(y, order, 1.0, &mut grad.values, &mut dhidden)?;
        self.backprop_hidden(&dhidden, &mut grad.values);
        Ok((lp, grad))
    }

    /// Draws a sequence. `temperature == 0` takes the argmax at every step
    /// (lowest index on ties). The returned log-probability is at temperature
    /// one under the realized order.
    pub fn sample(
        &self,
        temperature: f64,
        rng: &mut impl Rng,
        fixed_order: bool,
    ) -> Result<(Sequence, LogProbResult)> {
        if !(temperature >= 0.0) || temperature.is_infinite() {
            return Err(Error::InvalidInput(format!("temperature {temperature} must be finite and >= 0")));
        }
        let n = self.len();
        let order = if fixed_order {
            DecodingOrder::identity(n)
        } else {
            sample_order(n, rng)
        };
        let mut tokens: Vec<Option<u8>> = vec![None; n];
        let mut per_position = vec![0.0; n];
        let mut s = self.scratch();
        let mut probs = [0.0; N_TOKENS];
        for &i in order.perm() {
            self.fill_input(i, &mut s.input, |j| tokens[j]);
            self.forward(&mut s);
            let choice = if temperature == 0.0 {
                argmax(&s.logits)
            } else {
                let m = s.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for (p, l) in probs.iter_mut().zip(&s.logits) {
                    *p = ((l - m) / temperature).exp();
                    total += *p;
                }
                let mut u = rng.random::<f64>() * total;
                let mut pick = N_TOKENS - 1;
                for (t, p) in probs.iter().enumerate() {
                    if u < *p {
                        pick = t;
                        break;
                    }
                    u -= p;
                }
                pick
            };
            per_position[i] = s.logits[choice] - log_sum_exp(&s.logits);
            tokens[i] = Some(choice as u8);
        }
        let seq = Sequence::from_indices(tokens.into_iter().map(|t| t.expect("all decoded")).collect())?;
        Ok((seq, LogProbResult::from_positions(per_position, order)))
    }
}

fn check_structure(x: &Structure, y: &Sequence) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "structure {} has {} residues but the sequence has {}",
            x.id,
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Log-probability of `y` given `x` under an explicit decoding order.
pub fn logprob(params: &PolicyParams, x: &Structure, y: &Sequence, order: &DecodingOrder) -> Result<LogProbResult> {
    check_structure(x, y)?;
    let features = featurize(x, &params.hyper());
    Encoded::new(params, &features).logprob(y, order)
}

/// Log-probability together with its exact gradient.
pub fn grad_logprob(
    params: &PolicyParams,
    x: &Structure,
    y: &Sequence,
    order: &DecodingOrder,
) -> Result<(LogProbResult, Gradient)> {
    check_structure(x, y)?;
    let features = featurize(x, &params.hyper());
    Encoded::new(params, &features).grad_logprob(y, order)
}

/// Samples a sequence for `x` at `temperature`.
pub fn sample(
    params: &PolicyParams,
    x: &Structure,
    temperature: f64,
    rng: &mut impl Rng,
    fixed_order: bool,
) -> Result<(Sequence, LogProbResult)> {
    let features = featurize(x, &params.hyper());
    Encoded::new(params, &features).sample(temperature, rng, fixed_order)
}

/// Sampling against a precomputed encoding.
pub fn sample_encoded(
    encoded: &Encoded<'_>,
    temperature: f64,
    rng: &mut impl Rng,
    fixed_order: bool,
) -> Result<(Sequence, LogProbResult)> {
    encoded.sample(temperature, rng, fixed_order)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent partial sums so the loop vectorizes; fixed order keeps it deterministic
    let n = a.len().min(b.len());
    let (a4, b4) = (a[..n].chunks_exact(4), b[..n].chunks_exact(4));
    let (ra, rb) = (a4.remainder(), b4.remainder());
    let mut acc = [0.0; 4];
    for (x, y) in a4.zip(b4) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
