//! Paired-run ablations: bootstrap, constant-LR-after-stopping, LR sweeps,
//! and the memorization-curve extraction for label-noise analysis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::record::RunRecord;
use crate::harness::train::{train_run, RunArtifacts, RunConfig};

/// Per-epoch (clean, noisy) train-accuracy pairs for one model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemorizationCurve {
    pub model: String,
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
}

/// Extracts the clean/noisy train-accuracy series for the baseline and every
/// EMA decay from a noise-enabled run.
pub fn memorization_curve(record: &RunRecord) -> Result<Vec<MemorizationCurve>> {
    let has_noise = record
        .epochs
        .first()
        .and_then(|e| e.train_baseline.as_ref())
        .and_then(|t| t.noisy)
        .is_some();
    if !has_noise {
        return Err(Error::contract(
            "memorization curves require a run with label noise",
        ));
    }
    let n_ema = record.epochs[0].ema.len();
    let mut curves = vec![MemorizationCurve {
        model: "baseline".to_string(),
        clean: Vec::new(),
        noisy: Vec::new(),
    }];
    for i in 0..n_ema {
        curves.push(MemorizationCurve {
            model: format!("ema_{i}"),
            clean: Vec::new(),
            noisy: Vec::new(),
        });
    }
    for e in &record.epochs {
        let tb = e.train_baseline.as_ref().unwrap();
        curves[0].clean.push(tb.clean);
        curves[0].noisy.push(tb.noisy.unwrap());
        let te = e.train_ema.as_ref().unwrap();
        for (i, t) in te.iter().enumerate() {
            curves[i + 1].clean.push(t.clean);
            curves[i + 1].noisy.push(t.noisy.unwrap());
        }
    }
    Ok(curves)
}

/// Noisy train accuracy of a curve at the epoch (linearly interpolated)
/// where its clean accuracy first reaches `clean_target`. `None` if the
/// clean series never gets there.
pub fn noisy_acc_at_matched_clean(curve: &MemorizationCurve, clean_target: f64) -> Option<f64> {
    for i in 0..curve.clean.len() {
        if curve.clean[i] >= clean_target {
            if i == 0 {
                return Some(curve.noisy[0]);
            }
            let (c0, c1) = (curve.clean[i - 1], curve.clean[i]);
            let (n0, n1) = (curve.noisy[i - 1], curve.noisy[i]);
            if (c1 - c0).abs() < 1e-15 {
                return Some(n1);
            }
            let t = (clean_target - c0) / (c1 - c0);
            return Some(n0 + t * (n1 - n0));
        }
    }
    None
}

/// Runs the base config, then reruns it with the learning rate frozen at its
/// value from the EMA best-accuracy epoch onward. Returns `(cosine, frozen)`.
pub fn constant_lr_ablation(config: &RunConfig, seed: u64) -> Result<(RunArtifacts, RunArtifacts)> {
    if config.noise.is_none() {
        return Err(Error::config(
            "constant-LR ablation is defined for noise-enabled runs",
        ));
    }
    let base = train_run(config, seed)?;
    let freeze_epoch = base
        .record
        .best_val_acc
        .as_ref()
        .ok_or_else(|| Error::contract("base run produced no stopping verdict"))?
        .epoch;
    let mut frozen_cfg = config.clone();
    frozen_cfg.lr_freeze_epoch = Some(freeze_epoch);
    let frozen = train_run(&frozen_cfg, seed)?;
    Ok((base, frozen))
}

/// Final validation accuracies of an unswapped vs. once-per-epoch
/// bootstrapped run, same seed.
pub fn bootstrap_ablation(config: &RunConfig, seed: u64) -> Result<(RunArtifacts, RunArtifacts)> {
    let mut plain_cfg = config.clone();
    plain_cfg.bootstrap = false;
    let mut swapped_cfg = config.clone();
    swapped_cfg.bootstrap = true;
    let plain = train_run(&plain_cfg, seed)?;
    let swapped = train_run(&swapped_cfg, seed)?;
    Ok((plain, swapped))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LrSweepRow {
    pub lr: f64,
    pub seed: u64,
    pub baseline_best_val_acc: Option<f64>,
    pub ema_best_val_acc: Option<f64>,
    pub diverged: bool,
}

/// One `train_run` per (learning rate, seed); diverged runs are flagged
/// rather than reported with numbers.
pub fn lr_sweep(config: &RunConfig, lrs: &[f64], seeds: &[u64]) -> Result<Vec<LrSweepRow>> {
    if lrs.is_empty() {
        return Err(Error::config("lr sweep needs at least one learning rate"));
    }
    let mut rows = Vec::new();
    for &lr in lrs {
        for &seed in seeds {
            let mut cfg = config.clone();
            cfg.schedule.base_lr = lr;
            let run = train_run(&cfg, seed)?;
            if run.record.failed.is_some() {
                rows.push(LrSweepRow {
                    lr,
                    seed,
                    baseline_best_val_acc: None,
                    ema_best_val_acc: None,
                    diverged: true,
                });
                continue;
            }
            let baseline_best = run
                .record
                .epochs
                .iter()
                .map(|e| e.baseline.val_acc)
                .fold(f64::NEG_INFINITY, f64::max);
            rows.push(LrSweepRow {
                lr,
                seed,
                baseline_best_val_acc: Some(baseline_best),
                ema_best_val_acc: run.record.best_val_acc.as_ref().map(|v| v.val_acc),
                diverged: false,
            });
        }
    }
    Ok(rows)
}
