use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training objective selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Sft,
    Dpo,
    DpoScaled,
    DpoDiversity,
    DpoEntropy,
    DpoScaledDiversity,
}

/// Which regularizer, if any, enters the pairwise margin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Penalty {
    None,
    /// Mean Hamming fraction against cached samples from the snapshot policy.
    Diversity,
    /// Surprisal `−log π̃(y)` under the snapshot policy.
    Entropy,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Sft,
        Variant::Dpo,
        Variant::DpoScaled,
        Variant::DpoDiversity,
        Variant::DpoEntropy,
        Variant::DpoScaledDiversity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sft => "sft",
            Variant::Dpo => "dpo",
            Variant::DpoScaled => "dpo_scaled",
            Variant::DpoDiversity => "dpo_diversity",
            Variant::DpoEntropy => "dpo_entropy",
            Variant::DpoScaledDiversity => "dpo_scaled_diversity",
        }
    }

    /// β preset: 0.5 for plain DPO, 0.1 for every regularized or scaled variant.
    pub fn default_beta(self) -> f64 {
        match self {
            Variant::Dpo => 0.5,
            _ => 0.1,
        }
    }

    pub fn default_epochs(self) -> usize {
        match self {
            Variant::Sft => 2,
            _ => 20,
        }
    }

    pub fn is_preference(self) -> bool {
        self != Variant::Sft
    }

    pub fn penalty(self) -> Penalty {
        match self {
            Variant::DpoDiversity | Variant::DpoScaledDiversity => Penalty::Diversity,
            Variant::DpoEntropy => Penalty::Entropy,
            _ => Penalty::None,
        }
    }

    pub fn scaled(self) -> bool {
        matches!(self, Variant::DpoScaled | Variant::DpoScaledDiversity)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Orientation of the regularizer inside the pairwise margin.
///
/// `LoserMinusWinner` adds `α·(p(y_l) − p(y_w))`: a winner that is far from
/// the snapshot samples (or unlikely under the snapshot) gets a larger
/// margin. `WinnerMinusLoser` flips it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltySign {
    #[default]
    LoserMinusWinner,
    WinnerMinusLoser,
}

impl PenaltySign {
    pub fn shift(self, alpha: f64, winner: f64, loser: f64) -> f64 {
        match self {
            PenaltySign::LoserMinusWinner => alpha * (loser - winner),
            PenaltySign::WinnerMinusLoser => alpha * (winner - loser),
        }
    }
}

/// Optimizer and objective settings. Serialized as flat TOML; unknown keys
/// are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub beta: f64,
    pub alpha: f64,
    /// Scale reference log-probabilities by the prompt's mean candidate reward.
    pub reward_scaled: bool,
    /// Snapshot samples cached per prompt.
    pub m_samples: usize,
    /// Epochs between snapshot refreshes.
    pub k_refresh: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub penalty_sign: PenaltySign,
    /// Sampling temperature for the snapshot cache.
    pub tilde_temperature: f64,
    /// Decoding orders averaged per log-probability estimate.
    pub n_orders: usize,
    /// Samples per prompt for the per-epoch KL estimate (0 disables it).
    pub kl_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            alpha: 0.0,
            reward_scaled: false,
            m_samples: 8,
            k_refresh: 5,
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            penalty_sign: PenaltySign::default(),
            tilde_temperature: 1.0,
            n_orders: 1,
            kl_samples: 1,
        }
    }
}

impl TrainConfig {
    /// Defaults with the variant's β and epoch count.
    pub fn preset(variant: Variant) -> Self {
        Self {
            beta: variant.default_beta(),
            epochs: variant.default_epochs(),
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self, variant: Variant) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config(format!("`{key}`: {msg}")));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta", format!("{} must be finite and > 0", self.beta));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha", format!("{} must be finite and >= 0", self.alpha));
        }
        if self.alpha != 0.0 && variant.penalty() == Penalty::None {
            return bad(
                "alpha",
                format!("variant {variant} takes no penalty weight (got {}); use dpo_diversity or dpo_entropy", self.alpha),
            );
        }
        if self.reward_scaled && variant == Variant::Sft {
            return bad("reward_scaled", "incompatible with variant sft".into());
        }
        if self.m_samples == 0 && variant.penalty() == Penalty::Diversity {
            return bad("m_samples", "must be >= 1 for diversity-regularized variants".into());
        }
        if self.k_refresh == 0 {
            return bad("k_refresh", "must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1".into());
        }
        if self.n_orders == 0 {
            return bad("n_orders", "must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", format!("{} must be finite and >= 0", self.learning_rate));
        }
        for (key, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(key, format!("{v} must lie in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps", "must be > 0".into());
        }
        if !(self.tilde_temperature >= 0.0 && self.tilde_temperature.is_finite()) {
            return bad("tilde_temperature", "must be finite and >= 0".into());
        }
        Ok(())
    }

    /// Whether reference log-probabilities are scaled by the mean reward.
    pub fn effective_scaling(&self, variant: Variant) -> bool {
        variant.scaled() || self.reward_scaled
    }
}
