//! Weight averaging over a training trajectory: EMA banks with decay warm-up
//! and a sampling period, uniform SWA, and the BN-statistics policies used
//! when turning an averaged parameter vector into an evaluable model.
//!
//! Averaging never touches the source trajectory; states only observe
//! snapshots of the current parameters.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BnMoments, BnStats, MlpSpec, Model, ParamVector};
use crate::scalar::{real, Real};
use crate::tensor::Tensor2;

/// How BN statistics are produced for an averaged model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnPolicy {
    /// Use the moving average of BN stats tracked alongside the weights.
    BatchEma,
    /// Recompute stats from the train data every time the model is evaluated
    /// during training.
    RecomputeEachEpoch,
    /// Recompute stats from the train data once, for the final model.
    RecomputeOnceFinal,
}

impl BnPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            BnPolicy::BatchEma => "batch_ema",
            BnPolicy::RecomputeEachEpoch => "recompute_each_epoch",
            BnPolicy::RecomputeOnceFinal => "recompute_once_final",
        }
    }
}

/// `alpha^(to_T / from_T)`: the decay with the same forgetting horizon after
/// changing the sampling period from `from_T` to `to_T` steps.
pub fn effective_decay<F: Real>(alpha: F, from_period: usize, to_period: usize) -> F {
    let exponent = real::<F>(to_period as f64 / from_period as f64);
    alpha.powf(exponent)
}

/// One EMA of the trajectory: `avg <- a_t * avg + (1 - a_t) * x`, updated
/// every `sampling_period` optimizer steps (cadence enforced by the caller),
/// with optional decay warm-up `a_t = min(alpha, (t+1)/(t+10))`.
#[derive(Debug, Clone)]
pub struct EmaState<F> {
    pub decay: F,
    pub sampling_period: usize,
    pub update_count: usize,
    pub averaged_params: ParamVector<F>,
    pub averaged_bn: BnStats<F>,
    pub warmup_enabled: bool,
}

impl<F: Real> EmaState<F> {
    /// Initializes the average at the current iterate (`x_hat_0 = x_0`).
    pub fn new(
        decay: F,
        sampling_period: usize,
        warmup_enabled: bool,
        init_params: &ParamVector<F>,
        init_bn: &BnStats<F>,
    ) -> Self {
        Self {
            decay,
            sampling_period,
            update_count: 0,
            averaged_params: init_params.clone(),
            averaged_bn: init_bn.clone(),
            warmup_enabled,
        }
    }

    /// Decay applied at the current update count.
    /// Decay for the next update: `min(alpha, (t+1)/(t+10))` during warm-up,
    /// where `t` counts elapsed optimizer steps, so the warm-up horizon does
    /// not stretch with the sampling period.
    pub fn current_decay(&self) -> F {
        if self.warmup_enabled {
            let t = (self.update_count * self.sampling_period) as f64;
            self.decay.min(real((t + 1.0) / (t + 10.0)))
        } else {
            self.decay
        }
    }

    pub fn update(&mut self, current_params: &ParamVector<F>, current_bn: &BnStats<F>) -> Result<()> {
        self.averaged_params.check_layout(current_params)?;
        let a = self.current_decay();
        let one_minus = F::one() - a;
        for (avg, &x) in self
            .averaged_params
            .values_mut()
            .iter_mut()
            .zip(current_params.values())
        {
            *avg = a * *avg + one_minus * x;
        }
        for (avg_layer, cur_layer) in self.averaged_bn.layers.iter_mut().zip(&current_bn.layers) {
            for (avg, &x) in avg_layer.running_mean.iter_mut().zip(&cur_layer.running_mean) {
                *avg = a * *avg + one_minus * x;
            }
            for (avg, &x) in avg_layer.running_var.iter_mut().zip(&cur_layer.running_var) {
                *avg = a * *avg + one_minus * x;
            }
        }
        self.update_count += 1;
        Ok(())
    }

    /// Produces an evaluable model under the given BN policy.
    pub fn materialize(
        &self,
        spec: &MlpSpec,
        policy: BnPolicy,
        train_data: Option<(&Tensor2<F>, usize)>,
    ) -> Result<Model<F>> {
        if self.update_count == 0 {
            return Err(Error::contract("materialize before any EMA update"));
        }
        materialize_params(spec, &self.averaged_params, Some(&self.averaged_bn), policy, train_data)
    }
}

/// K parallel EMAs of one trajectory, sharing a sampling period.
#[derive(Debug, Clone)]
pub struct EmaBank<F> {
    pub states: Vec<EmaState<F>>,
    pub sampling_period: usize,
}

impl<F: Real> EmaBank<F> {
    pub fn new(
        decays: &[F],
        sampling_period: usize,
        warmup_enabled: bool,
        init_params: &ParamVector<F>,
        init_bn: &BnStats<F>,
    ) -> Result<Self> {
        if sampling_period == 0 {
            return Err(Error::input("sampling period must be positive"));
        }
        let increasing = decays.windows(2).all(|w| w[0] < w[1]);
        if !increasing || decays.iter().any(|&d| d < F::zero() || d >= F::one()) {
            return Err(Error::input(
                "decays must be strictly increasing and in [0, 1)",
            ));
        }
        Ok(Self {
            states: decays
                .iter()
                .map(|&d| EmaState::new(d, sampling_period, warmup_enabled, init_params, init_bn))
                .collect(),
            sampling_period,
        })
    }

    /// Whether the bank samples at this global step (steps count from 0; the
    /// update fires after the optimizer step of the sampled iteration).
    pub fn samples_at(&self, global_step: usize) -> bool {
        (global_step + 1) % self.sampling_period == 0
    }

    pub fn update_all(&mut self, params: &ParamVector<F>, bn: &BnStats<F>) -> Result<()> {
        for s in &mut self.states {
            s.update(params, bn)?;
        }
        Ok(())
    }
}

/// Uniform average of checkpoints from the final epochs.
#[derive(Debug, Clone)]
pub struct SwaState<F> {
    pub count: usize,
    pub mean_params: ParamVector<F>,
    pub start_epoch: usize,
}

impl<F: Real> SwaState<F> {
    pub fn new(template: &ParamVector<F>, start_epoch: usize) -> Self {
        Self {
            count: 0,
            mean_params: ParamVector::zeros(Arc::clone(template.layout())),
            start_epoch,
        }
    }

    /// `mean <- (n * mean + checkpoint) / (n + 1)`.
    pub fn update(&mut self, checkpoint: &ParamVector<F>) -> Result<()> {
        self.mean_params.check_layout(checkpoint)?;
        let n = F::from_usize_lossy(self.count);
        let n1 = F::from_usize_lossy(self.count + 1);
        for (m, &x) in self.mean_params.values_mut().iter_mut().zip(checkpoint.values()) {
            *m = (n * *m + x) / n1;
        }
        self.count += 1;
        Ok(())
    }

    /// Produces an evaluable model; `fallback_bn` is used under `BatchEma`
    /// (SWA does not track its own BN average).
    pub fn materialize(
        &self,
        spec: &MlpSpec,
        fallback_bn: &BnStats<F>,
        policy: BnPolicy,
        train_data: Option<(&Tensor2<F>, usize)>,
    ) -> Result<Model<F>> {
        if self.count == 0 {
            return Err(Error::contract("materialize before any SWA update"));
        }
        materialize_params(spec, &self.mean_params, Some(fallback_bn), policy, train_data)
    }
}

fn materialize_params<F: Real>(
    spec: &MlpSpec,
    params: &ParamVector<F>,
    tracked_bn: Option<&BnStats<F>>,
    policy: BnPolicy,
    train_data: Option<(&Tensor2<F>, usize)>,
) -> Result<Model<F>> {
    if !spec.has_batchnorm() {
        // No BN layers: every policy yields the same model.
        return Ok(Model::from_parts(spec.clone(), params.clone(), BnStats::empty()));
    }
    let bn = match policy {
        BnPolicy::BatchEma => tracked_bn
            .ok_or_else(|| Error::contract("batch_ema policy without tracked BN stats"))?
            .clone(),
        BnPolicy::RecomputeEachEpoch | BnPolicy::RecomputeOnceFinal => {
            let (data, batch_size) = train_data
                .ok_or_else(|| Error::input("recompute policy needs train data"))?;
            let template = tracked_bn.cloned().unwrap_or_else(|| BnStats::fresh(&spec.bn_widths()));
            let model = Model::from_parts(spec.clone(), params.clone(), template);
            recompute_bn(&model, data, batch_size)?
        }
    };
    Ok(Model::from_parts(spec.clone(), params.clone(), bn))
}

/// Rebuilds BN statistics with one gradient-free train-mode pass over the
/// data, accumulating exact dataset-level moments (not momentum-updated
/// running stats).
pub fn recompute_bn<F: Real>(model: &Model<F>, data: &Tensor2<F>, batch_size: usize) -> Result<BnStats<F>> {
    if data.rows() == 0 {
        return Err(Error::input("cannot recompute BN stats on an empty dataset"));
    }
    if batch_size < 2 {
        return Err(Error::input("BN recompute needs batches of at least 2"));
    }
    let widths = model.spec.bn_widths();
    let mut moments = BnMoments::new(&widths);
    let mut start = 0;
    while start < data.rows() {
        let end = (start + batch_size).min(data.rows());
        // a trailing single row cannot be batch-normalized; fold it into the
        // previous batch instead
        let end = if data.rows() - end == 1 { data.rows() } else { end };
        let idx: Vec<usize> = (start..end).collect();
        let batch = data.select_rows(&idx);
        model.forward_collect(&batch, &mut moments)?;
        start = end;
    }
    Ok(moments.into_stats(model.bn.momentum, model.bn.epsilon))
}
