//! Results persistence and consolidated reports.
//!
//! Directory layout per experiment:
//!
//! ```text
//! <out>/<name>/resolved_config.toml
//! <out>/<name>/<seed>/record.jsonl
//! <out>/<name>/<seed>/preds_{val,test}_<model>.csv
//! <out>/<name>/<seed>/ckpt_<model>.json
//! ```
//!
//! Model names: `baseline`, `ema_acc`, `ema_loss` (BN recomputed once),
//! `ema_acc_raw`, `ema_loss_raw` (batch-EMA stats), `swa`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::record::RunRecord;
use crate::harness::{RunArtifacts, RunConfig};
use crate::metrics::{
    accuracy_nll, churn, ece_equal_mass, js_divergence, temperature_scale, EceConfig, PredictionSet,
};
use crate::nn::{AveragingMeta, Checkpoint, Model};
use crate::Scalar;

pub const MODEL_NAMES: [&str; 6] = [
    "baseline",
    "ema_acc",
    "ema_acc_raw",
    "ema_loss",
    "ema_loss_raw",
    "swa",
];

/// Models reported in the Table-1-style summary.
pub const SUMMARY_MODELS: [&str; 4] = ["baseline", "ema_acc", "ema_loss", "swa"];

fn averaging_meta(
    artifacts: &RunArtifacts,
    config: &RunConfig,
    name: &str,
    run_id: &str,
) -> AveragingMeta {
    let verdict = match name {
        n if n.starts_with("ema_acc") => artifacts.record.best_val_acc.as_ref(),
        n if n.starts_with("ema_loss") => artifacts.record.lowest_val_loss.as_ref(),
        _ => None,
    };
    let (method, decay, update_count) = match name {
        "baseline" => ("baseline", None, 0),
        "swa" => ("swa", None, 0),
        _ => (
            "ema",
            verdict.map(|v| v.decay),
            verdict
                .map(|v| {
                    let idx = v.decay_index;
                    artifacts.bank.states.get(idx).map_or(0, |s| s.update_count)
                })
                .unwrap_or(0),
        ),
    };
    let bn_policy = if name.ends_with("_raw") || name == "baseline" {
        "batch_ema"
    } else {
        "recompute_once_final"
    };
    AveragingMeta {
        method: method.to_string(),
        decay,
        sampling_period: (method == "ema").then_some(config.ema_period),
        update_count,
        bn_policy: bn_policy.to_string(),
        source_run: run_id.to_string(),
    }
}

fn models_of<'a>(artifacts: &'a RunArtifacts) -> Vec<(&'static str, &'a Model<Scalar>)> {
    let mut out: Vec<(&'static str, &Model<Scalar>)> =
        vec![("baseline", &artifacts.models.baseline_final)];
    if let Some((recomputed, raw)) = &artifacts.models.ema_best_acc {
        out.push(("ema_acc", recomputed));
        out.push(("ema_acc_raw", raw));
    }
    if let Some((recomputed, raw)) = &artifacts.models.ema_best_loss {
        out.push(("ema_loss", recomputed));
        out.push(("ema_loss_raw", raw));
    }
    if let Some(swa) = &artifacts.models.swa {
        out.push(("swa", swa));
    }
    out
}

/// Persists one seed's run: record, checkpoints, validation and test
/// prediction dumps. The test set is only touched here, after training and
/// model selection are complete.
pub fn write_run_artifacts(
    seed_dir: &Path,
    config: &RunConfig,
    artifacts: &RunArtifacts,
) -> Result<()> {
    fs::create_dir_all(seed_dir)?;
    artifacts
        .record
        .save_jsonl(&seed_dir.join("record.jsonl"))?;
    let run_id = format!("seed{}", artifacts.record.seed);
    for (name, model) in models_of(artifacts) {
        let meta = averaging_meta(artifacts, config, name, &run_id);
        Checkpoint::from_model(model, Some(meta)).save(&seed_dir.join(format!("ckpt_{name}.json")))?;

        let val_logits = model.forward_eval(&artifacts.val.features)?;
        PredictionSet::from_logits(val_logits, artifacts.val.labels.clone(), format!("{run_id}_{name}"))?
            .dump_csv(&seed_dir.join(format!("preds_val_{name}.csv")))?;
        let test_logits = model.forward_eval(&artifacts.test.features)?;
        PredictionSet::from_logits(test_logits, artifacts.test.labels.clone(), format!("{run_id}_{name}"))?
            .dump_csv(&seed_dir.join(format!("preds_test_{name}.csv")))?;
    }
    Ok(())
}

/// One line per model: test accuracy and loss, for the end-of-train summary.
pub fn summary_lines(artifacts: &RunArtifacts) -> Result<Vec<String>> {
    let mut lines = Vec::new();
    for (name, model) in models_of(artifacts) {
        let logits = model.forward_eval(&artifacts.test.features)?;
        let preds = PredictionSet::from_logits(logits, artifacts.test.labels.clone(), name)?;
        let (acc, nll) = accuracy_nll(&preds);
        lines.push(format!("{name:14} test_acc {acc:.4}  test_loss {nll:.4}"));
    }
    Ok(lines)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn seed_dirs(experiment_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(experiment_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("record.jsonl").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::input(format!(
            "no completed runs under {}",
            experiment_dir.display()
        )));
    }
    Ok(dirs)
}

/// Generates `summary.csv`, `calibration.csv` and `churn.csv` from the
/// persisted runs of one experiment. Idempotent: identical inputs produce
/// identical outputs.
pub fn generate_report(experiment_dir: &Path) -> Result<()> {
    let dirs = seed_dirs(experiment_dir)?;

    // Table-1-style summary: {acc, loss} per model, mean +/- std over seeds
    let mut summary = String::from("model,acc_mean,acc_std,loss_mean,loss_std,n_seeds\n");
    for name in SUMMARY_MODELS {
        let mut accs = Vec::new();
        let mut losses = Vec::new();
        for dir in &dirs {
            let path = dir.join(format!("preds_test_{name}.csv"));
            if !path.exists() {
                continue;
            }
            let preds = PredictionSet::<Scalar>::load_csv(&path, name)?;
            let (acc, nll) = accuracy_nll(&preds);
            accs.push(acc);
            losses.push(nll);
        }
        if accs.is_empty() {
            continue;
        }
        let (am, asd) = mean_std(&accs);
        let (lm, lsd) = mean_std(&losses);
        summary.push_str(&format!("{name},{am},{asd},{lm},{lsd},{}\n", accs.len()));
    }
    fs::write(experiment_dir.join("summary.csv"), summary)?;

    // calibration: raw ECE and temperature-scaled ECE (temperature fit on
    // the validation dump, evaluated on the test dump)
    let mut calibration =
        String::from("model,ece_mean,ece_std,ece_ts_mean,ece_ts_std,temperature_mean,n_seeds\n");
    for name in SUMMARY_MODELS {
        let mut eces = Vec::new();
        let mut eces_ts = Vec::new();
        let mut taus = Vec::new();
        for dir in &dirs {
            let test_path = dir.join(format!("preds_test_{name}.csv"));
            let val_path = dir.join(format!("preds_val_{name}.csv"));
            if !test_path.exists() || !val_path.exists() {
                continue;
            }
            let test = PredictionSet::<Scalar>::load_csv(&test_path, name)?;
            let holdout = PredictionSet::<Scalar>::load_csv(&val_path, name)?;
            let cfg = EceConfig {
                n_bins: 100.min(test.len()),
            };
            eces.push(ece_equal_mass(&test, &cfg)?);
            let (tau, ece_ts) = temperature_scale(&holdout, &test, &cfg)?;
            taus.push(tau);
            eces_ts.push(ece_ts);
        }
        if eces.is_empty() {
            continue;
        }
        let (em, es) = mean_std(&eces);
        let (tm, ts) = mean_std(&eces_ts);
        let (taum, _) = mean_std(&taus);
        calibration.push_str(&format!(
            "{name},{em},{es},{tm},{ts},{taum},{}\n",
            eces.len()
        ));
    }
    fs::write(experiment_dir.join("calibration.csv"), calibration)?;

    // cross-seed churn/JS for baseline and EMA(loss); needs at least 2 runs
    let mut churn_out = String::from("model,metric,mean,std,n_pairs\n");
    if dirs.len() < 2 {
        churn_out.push_str("# unavailable: needs at least 2 seeds\n");
    } else {
        for name in ["baseline", "ema_loss"] {
            let mut sets = Vec::new();
            for dir in &dirs {
                let path = dir.join(format!("preds_test_{name}.csv"));
                if path.exists() {
                    sets.push(PredictionSet::<Scalar>::load_csv(&path, name)?);
                }
            }
            if sets.len() < 2 {
                continue;
            }
            let mut churns = Vec::new();
            let mut jss = Vec::new();
            for i in 0..sets.len() {
                for j in i + 1..sets.len() {
                    churns.push(churn(&sets[i], &sets[j])?);
                    jss.push(js_divergence(&sets[i], &sets[j])?);
                }
            }
            let (cm, cs) = mean_std(&churns);
            let (jm, js) = mean_std(&jss);
            churn_out.push_str(&format!("{name},churn,{cm},{cs},{}\n", churns.len()));
            churn_out.push_str(&format!("{name},js_divergence,{jm},{js},{}\n", jss.len()));
        }
    }
    fs::write(experiment_dir.join("churn.csv"), churn_out)?;
    Ok(())
}

/// Loads every seed's run record of an experiment.
pub fn load_records(experiment_dir: &Path) -> Result<Vec<RunRecord>> {
    seed_dirs(experiment_dir)?
        .iter()
        .map(|d| RunRecord::load_jsonl(&d.join("record.jsonl")))
        .collect()
}
