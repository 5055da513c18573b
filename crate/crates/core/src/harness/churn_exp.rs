//! Cross-seed prediction-consistency experiment: pairwise churn and JS
//! divergence of independently trained baselines vs. their EMA(loss) models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::train::{train_run, RunConfig};
use crate::metrics::{churn, js_divergence, PredictionSet};
use crate::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairStats {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl PairStats {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            values,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChurnExperimentResult {
    pub seeds: Vec<u64>,
    pub baseline_churn: PairStats,
    pub baseline_js: PairStats,
    pub ema_churn: PairStats,
    pub ema_js: PairStats,
}

/// Test-set prediction sets per seed, for the baseline and EMA(loss) models.
pub fn collect_prediction_sets(
    config: &RunConfig,
    seeds: &[u64],
) -> Result<Vec<(PredictionSet<Scalar>, PredictionSet<Scalar>)>> {
    let mut out = Vec::new();
    for &seed in seeds {
        let run = train_run(config, seed)?;
        if let Some(diag) = &run.record.failed {
            return Err(Error::Diverged(diag.clone()));
        }
        let baseline_logits = run.models.baseline_final.forward_eval(&run.test.features)?;
        let baseline = PredictionSet::from_logits(
            baseline_logits,
            run.test.labels.clone(),
            format!("baseline_seed{seed}"),
        )?;
        let (ema_model, _) = run
            .models
            .ema_best_loss
            .as_ref()
            .ok_or_else(|| Error::contract("run produced no EMA(loss) model"))?;
        let ema_logits = ema_model.forward_eval(&run.test.features)?;
        let ema = PredictionSet::from_logits(
            ema_logits,
            run.test.labels.clone(),
            format!("ema_loss_seed{seed}"),
        )?;
        out.push((baseline, ema));
    }
    Ok(out)
}

/// Pairwise churn/JS over all unordered seed pairs (self-pairs excluded).
pub fn churn_experiment(config: &RunConfig, seeds: &[u64]) -> Result<ChurnExperimentResult> {
    if seeds.len() < 2 {
        return Err(Error::input("churn experiment needs at least 2 seeds"));
    }
    let sets = collect_prediction_sets(config, seeds)?;
    pairwise_stats(seeds, &sets)
}

/// Computes the pairwise statistics from already-collected prediction sets.
pub fn pairwise_stats(
    seeds: &[u64],
    sets: &[(PredictionSet<Scalar>, PredictionSet<Scalar>)],
) -> Result<ChurnExperimentResult> {
    if sets.len() < 2 {
        return Err(Error::input("need at least 2 prediction set pairs"));
    }
    let mut baseline_churn = Vec::new();
    let mut baseline_js = Vec::new();
    let mut ema_churn = Vec::new();
    let mut ema_js = Vec::new();
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            baseline_churn.push(churn(&sets[i].0, &sets[j].0)?);
            baseline_js.push(js_divergence(&sets[i].0, &sets[j].0)?);
            ema_churn.push(churn(&sets[i].1, &sets[j].1)?);
            ema_js.push(js_divergence(&sets[i].1, &sets[j].1)?);
        }
    }
    Ok(ChurnExperimentResult {
        seeds: seeds.to_vec(),
        baseline_churn: PairStats::from_values(baseline_churn),
        baseline_js: PairStats::from_values(baseline_js),
        ema_churn: PairStats::from_values(ema_churn),
        ema_js: PairStats::from_values(ema_js),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::train::tests::tiny_config;

    #[test]
    fn three_seeds_give_three_pairs() {
        let result = churn_experiment(&tiny_config(), &[1, 2, 3]).unwrap();
        assert_eq!(result.baseline_churn.values.len(), 3);
        assert_eq!(result.ema_js.values.len(), 3);
    }

    #[test]
    fn single_seed_rejected() {
        assert!(churn_experiment(&tiny_config(), &[1]).is_err());
    }
}
