//! Experiment harness: the training driver with EMA bank and SWA attached,
//! plus the label-noise, ablation, sweep, linear-evaluation and churn
//! protocols.

pub mod ablations;
pub mod churn_exp;
pub mod linear_eval;
pub mod record;
pub mod train;

pub use ablations::{
    bootstrap_ablation, constant_lr_ablation, lr_sweep, memorization_curve,
    noisy_acc_at_matched_clean, LrSweepRow, MemorizationCurve,
};
pub use churn_exp::{churn_experiment, pairwise_stats, ChurnExperimentResult, PairStats};
pub use linear_eval::linear_eval;
pub use record::{EpochEntry, ModelEval, RunRecord, StoppingVerdict};
pub use train::{train_run, RunArtifacts, RunConfig, TrainedModels};
