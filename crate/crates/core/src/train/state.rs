use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::policy::{Encoded, Featurized, PolicyParams};
use crate::seeds;
use crate::sequence::Sequence;
use crate::train::adam::Adam;
use crate::train::config::{Penalty, PenaltySign, TrainConfig, Variant};
use crate::train::loss::{check_mean_reward, diversity_penalty, mean_logprob, pairwise_core, Adjust, LossEval, Pair, PairOrders};

/// Samples drawn from one snapshot, indexed by prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct TildeCache {
    pub generation: u64,
    pub samples: Vec<Vec<Sequence>>,
}

/// Objective resolved from a config and variant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub beta: f64,
    pub alpha: f64,
    pub scaled: bool,
    pub penalty: Penalty,
    pub sign: crate::train::PenaltySign,
}

impl Objective {
    pub fn new(config: &TrainConfig, variant: Variant) -> Result<Self> {
        config.validate(variant)?;
        Ok(Self {
            beta: config.beta,
            alpha: config.alpha,
            scaled: config.effective_scaling(variant),
            penalty: variant.penalty(),
            sign: config.penalty_sign,
        })
    }
}

/// Mutable training state. The reference policy is fixed at construction;
/// the snapshot `tilde` is replaced only by [`TrainState::refresh_tilde`]
/// (or explicitly by [`TrainState::set_tilde`], which invalidates the cache).
#[derive(Clone, Debug)]
pub struct TrainState {
    pub theta: PolicyParams,
    reference: Arc<PolicyParams>,
    tilde: PolicyParams,
    tilde_generation: u64,
    cache: Option<TildeCache>,
    adam: Adam,
    pub epoch: usize,
    /// Mean training loss per completed epoch.
    pub history: Vec<f64>,
}

impl TrainState {
    /// Starts from `initial`, which also becomes the reference and the first snapshot.
    pub fn new(initial: PolicyParams, config: &TrainConfig) -> Self {
        let reference = Arc::new(initial.clone());
        Self::build(initial, reference, config)
    }

    pub fn with_reference(theta: PolicyParams, reference: PolicyParams, config: &TrainConfig) -> Result<Self> {
        theta.check_compatible(&reference)?;
        Ok(Self::build(theta, Arc::new(reference), config))
    }

    fn build(theta: PolicyParams, reference: Arc<PolicyParams>, config: &TrainConfig) -> Self {
        let adam = Adam::new(
            theta.len(),
            config.learning_rate,
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        );
        Self {
            tilde: (*reference).clone(),
            theta,
            reference,
            tilde_generation: 0,
            cache: None,
            adam,
            epoch: 0,
            history: Vec::new(),
        }
    }

    pub fn reference(&self) -> &PolicyParams {
        &self.reference
    }

    pub(crate) fn reference_arc(&self) -> Arc<PolicyParams> {
        Arc::clone(&self.reference)
    }

    pub fn tilde(&self) -> &PolicyParams {
        &self.tilde
    }

    pub fn tilde_generation(&self) -> u64 {
        self.tilde_generation
    }

    pub fn cache(&self) -> Option<&TildeCache> {
        self.cache.as_ref()
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.adam.steps()
    }

    /// Replaces the snapshot and drops the sample cache.
    pub fn set_tilde(&mut self, tilde: PolicyParams) -> Result<()> {
        self.theta.check_compatible(&tilde)?;
        self.tilde = tilde;
        self.tilde_generation += 1;
        self.cache = None;
        Ok(())
    }

    /// Snapshots θ into `tilde` and draws `m` samples per prompt at
    /// `temperature` with random orders. Prompt `i` uses stream `i` of `seed`.
    /// Must be called on a refresh boundary (`epoch % k_refresh == 0`).
    pub fn refresh_tilde(
        &mut self,
        prompts: &[Featurized],
        m: usize,
        temperature: f64,
        k_refresh: usize,
        seed: u64,
    ) -> Result<()> {
        if k_refresh == 0 || self.epoch % k_refresh != 0 {
            return Err(Error::InvalidInput(format!(
                "snapshot refresh at epoch {} is off the {k_refresh}-epoch schedule",
                self.epoch
            )));
        }
        let tilde = self.theta.clone();
        let samples = prompts
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let mut rng = seeds::rng_for(seed, i as u64);
                let enc = Encoded::new(&tilde, &p.features);
                (0..m)
                    .map(|_| enc.sample(temperature, &mut rng, false).map(|(y, _)| y))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        self.tilde = tilde;
        self.tilde_generation += 1;
        self.cache = Some(TildeCache {
            generation: self.tilde_generation,
            samples,
        });
        Ok(())
    }

    fn fresh_cache(&self) -> Result<&TildeCache> {
        match &self.cache {
            Some(c) if c.generation == self.tilde_generation => Ok(c),
            Some(c) => Err(Error::StaleCache(format!(
                "cache from snapshot {} but the current snapshot is {}; refresh required",
                c.generation, self.tilde_generation
            ))),
            None => Err(Error::StaleCache("no samples cached for the current snapshot; refresh required".into())),
        }
    }

    fn adjustments(&self, pairs: &[Pair], orders: &[PairOrders], objective: &Objective) -> Result<Vec<Adjust>> {
        let cache = match objective.penalty {
            Penalty::Diversity => Some(self.fresh_cache()?),
            _ => None,
        };
        pairs
            .par_iter()
            .zip(orders)
            .map(|(p, o)| {
                let ref_scale = if objective.scaled {
                    check_mean_reward(p.mean_reward)?
                } else {
                    1.0
                };
                let shift = match objective.penalty {
                    Penalty::None => 0.0,
                    _ if objective.alpha == 0.0 => 0.0,
                    Penalty::Diversity => {
                        let samples = cache
                            .expect("checked above")
                            .samples
                            .get(p.prompt_index)
                            .ok_or_else(|| Error::InvalidInput(format!("no cached samples for prompt {}", p.prompt_index)))?;
                        let pw = diversity_penalty(samples, p.winner)?;
                        let pl = diversity_penalty(samples, p.loser)?;
                        objective.sign.shift(objective.alpha, pw, pl)
                    }
                    Penalty::Entropy => {
                        let enc = Encoded::new(&self.tilde, &p.prompt.features);
                        let lw = mean_logprob(&enc, p.winner, &o.winner)?;
                        let ll = mean_logprob(&enc, p.loser, &o.loser)?;
                        entropy_shift(objective.sign, objective.alpha, lw, ll)
                    }
                };
                Ok(Adjust { ref_scale, shift })
            })
            .collect()
    }

    /// Loss and gradient at the current θ. `refs`, when given, holds the
    /// reference encoding of every training prompt (indexed by `prompt_index`).
    pub(crate) fn evaluate_with(
        &self,
        pairs: &[Pair],
        orders: &[PairOrders],
        objective: &Objective,
        refs: Option<&[Encoded]>,
    ) -> Result<LossEval> {
        let adjust = self.adjustments(pairs, orders, objective)?;
        match refs {
            Some(refs) => pairwise_core(&self.theta, |k| &refs[pairs[k].prompt_index], pairs, orders, objective.beta, &adjust),
            None => {
                let refs: Vec<Encoded> = pairs.iter().map(|p| Encoded::new(&self.reference, &p.prompt.features)).collect();
                pairwise_core(&self.theta, |k| &refs[k], pairs, orders, objective.beta, &adjust)
            }
        }
    }

    pub fn evaluate(&self, pairs: &[Pair], orders: &[PairOrders], objective: &Objective) -> Result<LossEval> {
        self.evaluate_with(pairs, orders, objective, None)
    }

    /// Applies one optimizer step. Non-finite losses or parameters abort with
    /// the pre-step parameters attached.
    pub fn apply(&mut self, eval: &LossEval) -> Result<()> {
        if !eval.loss.is_finite() || eval.gradient.values.iter().any(|g| !g.is_finite()) {
            return Err(Error::numeric(
                format!("non-finite loss {} at epoch {}", eval.loss, self.epoch),
                Some(&self.theta),
            ));
        }
        let before = self.theta.clone();
        self.adam.step(self.theta.values_mut(), &eval.gradient.values);
        if !self.theta.is_finite() {
            self.theta = before;
            return Err(Error::numeric(
                format!("parameters became non-finite at epoch {}", self.epoch),
                Some(&self.theta),
            ));
        }
        Ok(())
    }

    fn step(&mut self, pairs: &[Pair], orders: &[PairOrders], objective: &Objective) -> Result<LossEval> {
        let eval = self.evaluate(pairs, orders, objective)?;
        self.apply(&eval)?;
        Ok(eval)
    }

    /// One update of diversity-regularized DPO; the cache must be fresh.
    pub fn diversity_dpo_step(&mut self, pairs: &[Pair], orders: &[PairOrders], config: &TrainConfig) -> Result<LossEval> {
        let objective = Objective::new(config, Variant::DpoDiversity)?;
        self.step(pairs, orders, &objective)
    }

    /// One update of entropy-regularized DPO.
    pub fn entropy_dpo_step(&mut self, pairs: &[Pair], orders: &[PairOrders], config: &TrainConfig) -> Result<LossEval> {
        let objective = Objective::new(config, Variant::DpoEntropy)?;
        self.step(pairs, orders, &objective)
    }
}

/// Margin shift of the entropy penalty from π̃ log-probabilities. The
/// penalty is the surprisal `−log π̃(y)`, so under the default orientation
/// unlikely winners are favored the way diverse winners are under the
/// diversity penalty: `α log π̃(y_w) − α log π̃(y_l)`.
pub fn entropy_shift(sign: PenaltySign, alpha: f64, logprob_winner: f64, logprob_loser: f64) -> f64 {
    sign.shift(alpha, -logprob_winner, -logprob_loser)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::fold;
    use crate::policy::Hyper;
    use crate::seeds::rng_for;
    use crate::train::loss::{dpo_loss, neg_log_sigmoid};

    fn s(x: &str) -> Sequence {
        x.parse().unwrap()
    }

    fn setup() -> (Vec<Featurized>, PolicyParams) {
        let prompts = ["ACDEFGHIK", "LMNPQRSTV"]
            .iter()
            .map(|n| Featurized::new(fold(&s(n)).unwrap(), &Hyper::default()))
            .collect();
        let mut p = PolicyParams::init(Hyper::default(), &mut rng_for(4, 0));
        p.values_mut().iter_mut().for_each(|v| *v *= 10.0);
        (prompts, p)
    }

    #[test]
    fn entropy_shift_hand_set_logprobs() {
        let d = entropy_shift(PenaltySign::default(), 0.1, -30.0, -20.0);
        assert!((d + 1.0).abs() < 1e-15);
        assert!((neg_log_sigmoid(d) - 1.313_262).abs() < 1e-6);
        let flipped = entropy_shift(PenaltySign::WinnerMinusLoser, 0.1, -30.0, -20.0);
        assert!((neg_log_sigmoid(flipped) - 0.313_262).abs() < 1e-6);
    }

    #[test]
    fn first_refresh_snapshots_reference() {
        let (prompts, p) = setup();
        let cfg = TrainConfig::default();
        let mut st = TrainState::new(p.clone(), &cfg);
        st.refresh_tilde(&prompts, 8, 1.0, 5, 9).unwrap();
        assert_eq!(st.tilde(), st.reference());
        let cache = st.cache().unwrap();
        assert!(cache.samples.iter().all(|c| c.len() == 8));
        let mut again = TrainState::new(p, &cfg);
        again.refresh_tilde(&prompts, 8, 1.0, 5, 9).unwrap();
        assert_eq!(again.cache().unwrap().samples, cache.samples);
    }

    #[test]
    fn refresh_off_schedule_rejected() {
        let (prompts, p) = setup();
        let mut st = TrainState::new(p, &TrainConfig::default());
        st.epoch = 3;
        assert!(st.refresh_tilde(&prompts, 2, 1.0, 5, 0).is_err());
        st.epoch = 10;
        st.refresh_tilde(&prompts, 2, 1.0, 5, 0).unwrap();
    }

    #[test]
    fn stale_cache_is_refused() {
        let (prompts, p) = setup();
        let (w, l) = (s("ACDEFGHIA"), s("WCDEFGHIK"));
        let pairs = [Pair {
            prompt: &prompts[0],
            prompt_index: 0,
            winner: &w,
            loser: &l,
            mean_reward: 0.5,
        }];
        let orders = [PairOrders::draw(9, 1, &mut rng_for(0, 0))];
        let cfg = TrainConfig {
            alpha: 0.1,
            ..TrainConfig::default()
        };
        let mut st = TrainState::new(p.clone(), &cfg);
        assert!(matches!(st.diversity_dpo_step(&pairs, &orders, &cfg), Err(Error::StaleCache(_))));
        st.refresh_tilde(&prompts, 4, 1.0, 5, 0).unwrap();
        st.set_tilde(p).unwrap();
        assert!(matches!(st.diversity_dpo_step(&pairs, &orders, &cfg), Err(Error::StaleCache(_))));
        st.refresh_tilde(&prompts, 4, 1.0, 5, 0).unwrap();
        st.diversity_dpo_step(&pairs, &orders, &cfg).unwrap();
        assert_eq!(st.optimizer_steps(), 1);
        assert_ne!(&st.theta, st.reference());
    }

    #[test]
    fn uniform_snapshot_entropy_penalties_cancel() {
        let (prompts, p) = setup();
        let (w, l) = (s("ACDEFGHIA"), s("WCDEFGHIK"));
        let pairs = [Pair {
            prompt: &prompts[0],
            prompt_index: 0,
            winner: &w,
            loser: &l,
            mean_reward: 0.5,
        }];
        let orders = [PairOrders::draw(9, 1, &mut rng_for(0, 1))];
        let cfg = TrainConfig {
            alpha: 0.3,
            ..TrainConfig::default()
        };
        let mut theta = p.clone();
        theta.values_mut()[5] += 0.3;
        let mut st = TrainState::with_reference(theta.clone(), p.clone(), &cfg).unwrap();
        st.set_tilde(PolicyParams::zeros(Hyper::default())).unwrap();
        let obj = Objective::new(&cfg, Variant::DpoEntropy).unwrap();
        let reg = st.evaluate(&pairs, &orders, &obj).unwrap();
        let plain = dpo_loss(&theta, &p, &pairs, &orders, cfg.beta).unwrap();
        assert!((reg.loss - plain.loss).abs() < 1e-12);
    }
}
