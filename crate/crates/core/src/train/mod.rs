//! Supervised fine-tuning and the DPO family: standard, reward-scaled,
//! diversity-regularized and entropy-regularized.

mod adam;
mod config;
mod loss;
mod state;
mod trainer;

pub use adam::Adam;
pub use config::{Penalty, PenaltySign, TrainConfig, Variant};
pub use loss::{
    diversity_penalty, dpo_loss, implicit_reward, neg_log_sigmoid, pairwise_loss, scaled_dpo_loss, sft_loss, sigmoid,
    Adjust, LossEval, Pair, PairOrders,
};
pub use state::{entropy_shift, Objective, TildeCache, TrainState};
pub use trainer::{sft, train_loop, write_metrics_csv, EpochMetrics, PairItem, TrainData, METRICS_HEADER};
