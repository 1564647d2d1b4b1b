//! Evaluation metrics, estimators and sweeps.

mod estimators;
mod eval;
mod metrics;
mod sweep;

pub use estimators::{diff_entropy, kl_estimate, order_logprobs, token_entropy, vasicek, DiffEntropy, Estimate};
pub use eval::{evaluate, EvalReport, EvalRow, EvalSummary};
pub use metrics::{
    average_ranks, best_of_n_recovery, diversity, rank_correlation, recovery, token_freq_kl, token_frequencies,
    FREQ_SMOOTHING,
};
pub use sweep::{
    bucket_tm_delta, logprob_reward_correlation, pareto_front, sweep, write_sweep_csv, BucketDelta, BucketReport,
    SweepPoint, SweepPolicy, SWEEP_HEADER,
};
