//! Weight averaging over SGD training, at desk scale.
//!
//! The crate trains small feed-forward networks with Nesterov-momentum SGD and
//! maintains averaged copies of the weights alongside the run: a bank of
//! exponential moving averages (EMA) with configurable decays and sampling
//! period, and a uniform stochastic weight average (SWA). Batch-normalization
//! statistics are handled separately from the weights, with a choice of
//! policies (tracked moving average vs. recomputation over the train data).
//!
//! Evaluation covers accuracy/NLL, prediction churn, Jensen-Shannon
//! divergence, equal-mass expected calibration error and post-hoc temperature
//! scaling. The [`harness`] module drives full experiments (label noise,
//! learning-rate sweeps, linear evaluation, ablations) and the `wavg` binary
//! exposes them as CLI subcommands.
//!
//! Core math is generic over the scalar type through [`scalar::Real`];
//! concrete `f64` aliases live at the crate root and are what the harness and
//! CLI use.

pub mod averaging;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod report;
pub mod scalar;
pub mod schedule;
pub mod seeds;
pub mod tensor;

pub use error::{Error, Result};

/// Scalar type used by the experiment harness and CLI. All training
/// arithmetic runs in double precision so oracle comparisons stay tight.
pub type Scalar = f64;

pub type Tensor2 = tensor::Tensor2<Scalar>;
pub type ParamVector = nn::ParamVector<Scalar>;
pub type BnStats = nn::BnStats<Scalar>;
pub type Model = nn::Model<Scalar>;
pub type SgdState = optim::SgdState<Scalar>;
pub type Schedule = schedule::Schedule<Scalar>;
pub type EmaState = averaging::EmaState<Scalar>;
pub type EmaBank = averaging::EmaBank<Scalar>;
pub type SwaState = averaging::SwaState<Scalar>;
pub type PredictionSet = metrics::PredictionSet<Scalar>;
