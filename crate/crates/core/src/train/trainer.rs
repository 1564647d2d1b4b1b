use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::analysis::kl_estimate;
use crate::dataset::{Prompt, PreferenceRecord};
use crate::error::{Error, Result};
use crate::policy::{sample_order, Encoded, Featurized, Hyper, PolicyParams};
use crate::seeds::{derive, rng_for};
use crate::sequence::Sequence;
use crate::train::config::{Penalty, TrainConfig, Variant};
use crate::train::loss::{sft_loss, Pair, PairOrders};
use crate::train::state::{Objective, TrainState};

/// A preference pair referring to a prompt by index.
#[derive(Clone, Debug, PartialEq)]
pub struct PairItem {
    pub prompt: usize,
    pub winner: Sequence,
    pub loser: Sequence,
    pub mean_reward: f64,
}

/// Featurized prompts with their natives and preference pairs.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub prompts: Vec<Featurized>,
    pub natives: Vec<Sequence>,
    pub pairs: Vec<PairItem>,
}

impl TrainData {
    /// Natives only, for supervised fine-tuning.
    pub fn from_prompts(prompts: &[Prompt], hyper: &Hyper) -> Self {
        Self {
            prompts: prompts.iter().map(|p| Featurized::new(p.structure.clone(), hyper)).collect(),
            natives: prompts.iter().map(|p| p.native.clone()).collect(),
            pairs: Vec::new(),
        }
    }

    /// One prompt per record, matched to `prompts` by structure id.
    pub fn from_records(records: &[PreferenceRecord], prompts: &[Prompt], hyper: &Hyper) -> Result<Self> {
        let by_id: HashMap<&str, &Prompt> = prompts.iter().map(|p| (p.id(), p)).collect();
        let mut data = Self {
            prompts: Vec::with_capacity(records.len()),
            natives: Vec::with_capacity(records.len()),
            pairs: Vec::new(),
        };
        for (i, rec) in records.iter().enumerate() {
            let p = by_id
                .get(rec.structure_id.as_str())
                .ok_or_else(|| Error::Data(format!("record {} has no matching structure", rec.structure_id)))?;
            if p.native != rec.native {
                return Err(Error::Data(format!("record {} native differs from the prompt's", rec.structure_id)));
            }
            data.prompts.push(Featurized::new(p.structure.clone(), hyper));
            data.natives.push(p.native.clone());
            for &(w, l) in &rec.pairs {
                data.pairs.push(PairItem {
                    prompt: i,
                    winner: rec.candidates[w].sequence.clone(),
                    loser: rec.candidates[l].sequence.clone(),
                    mean_reward: rec.mean_reward,
                });
            }
        }
        Ok(data)
    }

    fn pair(&self, k: usize) -> Pair<'_> {
        let item = &self.pairs[k];
        Pair {
            prompt: &self.prompts[item.prompt],
            prompt_index: item.prompt,
            winner: &item.winner,
            loser: &item.loser,
            mean_reward: item.mean_reward,
        }
    }
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    /// Mean implicit-reward margin `r_w − r_l` over the epoch (NaN for SFT).
    pub margin_mean: f64,
    /// Monte-Carlo KL from the starting policy after the epoch (NaN when disabled).
    pub kl_estimate: f64,
    pub wallclock_s: f64,
}

pub const METRICS_HEADER: &str = "epoch,loss,margin_mean,kl_estimate,wallclock_s";

pub fn write_metrics_csv<W: Write>(mut w: W, metrics: &[EpochMetrics]) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for m in metrics {
        writeln!(w, "{},{},{},{},{:.3}", m.epoch, m.loss, m.margin_mean, m.kl_estimate, m.wallclock_s)?;
    }
    Ok(())
}

// Stream ids within an epoch seed; batch items use their dataset index.
const SHUFFLE_STREAM: u64 = u64::MAX - 1;
const REFRESH_STREAM: u64 = u64::MAX - 2;
const KL_STREAM: u64 = u64::MAX - 3;

/// Runs `config.epochs` epochs of `variant` starting from `initial`, which
/// also serves as the reference policy. Minibatches are reshuffled every
/// epoch; the snapshot is refreshed every `k_refresh` epochs for the
/// regularized variants. Deterministic for a given seed.
pub fn train_loop(
    initial: &PolicyParams,
    data: &TrainData,
    config: &TrainConfig,
    variant: Variant,
) -> Result<(PolicyParams, Vec<EpochMetrics>)> {
    let objective = Objective::new(config, variant)?;
    let n_items = if variant.is_preference() { data.pairs.len() } else { data.natives.len() };
    if n_items == 0 && config.epochs > 0 {
        return Err(Error::Data(format!("no training examples for variant {variant}")));
    }
    let mut state = TrainState::new(initial.clone(), config);
    let reference = state.reference_arc();
    let refs: Vec<Encoded> = if variant.is_preference() {
        data.prompts.iter().map(|p| Encoded::new(&reference, &p.features)).collect()
    } else {
        Vec::new()
    };
    let mut metrics = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let epoch_seed = derive(config.seed, epoch as u64);
        if objective.penalty != Penalty::None && epoch % config.k_refresh == 0 {
            let m = if objective.penalty == Penalty::Diversity { config.m_samples } else { 0 };
            state.refresh_tilde(
                &data.prompts,
                m,
                config.tilde_temperature,
                config.k_refresh,
                derive(epoch_seed, REFRESH_STREAM),
            )?;
        }
        let mut order: Vec<usize> = (0..n_items).collect();
        order.shuffle(&mut rng_for(epoch_seed, SHUFFLE_STREAM));

        let (mut loss_sum, mut margin_sum) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            if variant.is_preference() {
                let pairs: Vec<Pair> = batch.iter().map(|&k| data.pair(k)).collect();
                let orders: Vec<PairOrders> = batch
                    .iter()
                    .zip(&pairs)
                    .map(|(&k, p)| PairOrders::draw(p.prompt.len(), config.n_orders, &mut rng_for(epoch_seed, k as u64)))
                    .collect();
                let eval = state.evaluate_with(&pairs, &orders, &objective, Some(&refs))?;
                state.apply(&eval)?;
                loss_sum += eval.loss * batch.len() as f64;
                margin_sum += eval.margins.iter().sum::<f64>();
            } else {
                let examples: Vec<(&Featurized, &Sequence)> =
                    batch.iter().map(|&k| (&data.prompts[k], &data.natives[k])).collect();
                let orders: Vec<_> = batch
                    .iter()
                    .map(|&k| sample_order(data.prompts[k].len(), &mut rng_for(epoch_seed, k as u64)))
                    .collect();
                let (loss, gradient) = sft_loss(&state.theta, &examples, &orders)?;
                let eval = crate::train::LossEval {
                    loss,
                    gradient,
                    margins: Vec::new(),
                };
                state.apply(&eval)?;
                loss_sum += loss * batch.len() as f64;
            }
        }
        let kl = if config.kl_samples > 0 {
            kl_estimate(&state.theta, &reference, &data.prompts, config.kl_samples, derive(epoch_seed, KL_STREAM))?.mean
        } else {
            f64::NAN
        };
        let loss = loss_sum / n_items as f64;
        state.history.push(loss);
        state.epoch += 1;
        metrics.push(EpochMetrics {
            epoch,
            loss,
            margin_mean: if variant.is_preference() { margin_sum / n_items as f64 } else { f64::NAN },
            kl_estimate: kl,
            wallclock_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok((state.theta, metrics))
}

/// Supervised fine-tuning on the natives in `data`.
pub fn sft(initial: &PolicyParams, data: &TrainData, config: &TrainConfig) -> Result<(PolicyParams, Vec<EpochMetrics>)> {
    if data.natives.is_empty() {
        return Err(Error::Data("supervised fine-tuning needs at least one example".into()));
    }
    train_loop(initial, data, config, Variant::Sft)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_record, gen_prompts};
    use crate::geometry::reward;

    fn tiny() -> (Vec<Prompt>, Vec<PreferenceRecord>) {
        let prompts = gen_prompts(6, 6..=9, 11, "t").unwrap();
        let mut rng = rng_for(2, 0);
        let records = prompts
            .iter()
            .map(|p| {
                let cands = (0..3)
                    .map(|_| {
                        let tokens = (0..p.native.len()).map(|_| rand::Rng::random_range(&mut rng, 0..20u8)).collect();
                        let y = Sequence::from_indices(tokens).unwrap();
                        let r = reward(&p.structure, &y).unwrap();
                        (y, r)
                    })
                    .collect();
                build_record(p.id(), &p.native, cands)
            })
            .collect();
        (prompts, records)
    }

    fn init() -> PolicyParams {
        PolicyParams::init(Hyper::default(), &mut rng_for(5, 0))
    }

    #[test]
    fn zero_epochs_returns_initial() {
        let (prompts, records) = tiny();
        let data = TrainData::from_records(&records, &prompts, &Hyper::default()).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::preset(Variant::Dpo)
        };
        let (out, metrics) = train_loop(&init(), &data, &cfg, Variant::Dpo).unwrap();
        assert_eq!(out, init());
        assert!(metrics.is_empty());
    }

    #[test]
    fn zero_learning_rate_leaves_params_bit_exact() {
        let (prompts, _) = tiny();
        let data = TrainData::from_prompts(&prompts, &Hyper::default());
        let cfg = TrainConfig {
            epochs: 2,
            learning_rate: 0.0,
            ..TrainConfig::preset(Variant::Sft)
        };
        let (out, _) = sft(&init(), &data, &cfg).unwrap();
        assert_eq!(out.values(), init().values());
    }

    #[test]
    fn runs_are_reproducible_and_logged() {
        let (prompts, records) = tiny();
        let data = TrainData::from_records(&records, &prompts, &Hyper::default()).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            k_refresh: 2,
            m_samples: 3,
            alpha: 0.2,
            batch_size: 4,
            ..TrainConfig::preset(Variant::DpoDiversity)
        };
        let (a, ma) = train_loop(&init(), &data, &cfg, Variant::DpoDiversity).unwrap();
        let (b, mb) = train_loop(&init(), &data, &cfg, Variant::DpoDiversity).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_eq!(ma.len(), 3);
        assert!((ma[0].loss - mb[0].loss).abs() == 0.0);
        let mut csv = Vec::new();
        write_metrics_csv(&mut csv, &ma).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("epoch,loss,margin_mean,kl_estimate,wallclock_s\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn sft_reduces_training_nll() {
        let (prompts, _) = tiny();
        let data = TrainData::from_prompts(&prompts, &Hyper::default());
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 2,
            learning_rate: 3e-3,
            ..TrainConfig::preset(Variant::Sft)
        };
        let (_, m) = sft(&init(), &data, &cfg).unwrap();
        assert!(m.last().unwrap().loss < m[0].loss, "{:?}", m.iter().map(|x| x.loss).collect::<Vec<_>>());
    }

    #[test]
    fn missing_structure_is_a_data_error() {
        let (prompts, records) = tiny();
        assert!(matches!(
            TrainData::from_records(&records, &prompts[1..], &Hyper::default()),
            Err(Error::Data(_))
        ));
    }
}
