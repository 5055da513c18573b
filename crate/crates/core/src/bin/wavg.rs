//! Command-line driver for the weight-averaging toolkit.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use wavg::averaging::BnPolicy;
use wavg::config::{default_config_toml, ExperimentConfig};
use wavg::data::{stratified_split, synthesize, DatasetSpec};
use wavg::error::Result;
use wavg::harness::{
    bootstrap_ablation, constant_lr_ablation, linear_eval, lr_sweep, memorization_curve,
    noisy_acc_at_matched_clean, pairwise_stats, train_run, RunArtifacts, RunConfig,
};
use wavg::metrics::PredictionSet;
use wavg::nn::Checkpoint;
use wavg::report::{generate_report, summary_lines, write_run_artifacts};
use wavg::seeds::SeedState;
use wavg::Scalar;

#[derive(Parser)]
#[command(name = "wavg", about = "Weight averaging (EMA banks and SWA) for small MLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment config (TOML). Omit to use the built-in default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds to run; overrides the config's seed list.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Output directory root.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Config override as dotted.path=value; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum AblationKind {
    Bootstrap,
    ConstantLr,
    BnPolicy,
    LrSweep,
}

#[derive(Subcommand)]
enum Command {
    /// Train all seeds of an experiment and persist records, checkpoints and
    /// prediction dumps.
    Train(CommonArgs),
    /// Paired-comparison ablations over the same seeds.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        kind: AblationKind,
        /// Learning rates for the lr-sweep ablation.
        #[arg(long, value_delimiter = ',')]
        lrs: Vec<f64>,
    },
    /// Consolidate persisted runs into summary, calibration and churn tables.
    Report {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a linear head on a frozen checkpoint and report target accuracy.
    LinearEval {
        #[command(flatten)]
        common: CommonArgs,
        /// Backbone checkpoint (JSON) to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Cross-seed prediction churn and JS divergence, baseline vs. EMA(loss).
    Churn(CommonArgs),
    /// Print the built-in default config.
    DefaultConfig,
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path, &common.overrides)?,
        None => ExperimentConfig::from_toml_str(default_config_toml(), &common.overrides)?,
    };
    if !common.seed.is_empty() {
        cfg.seeds = common.seed.clone();
    }
    Ok(cfg)
}

fn experiment_dir(common: &CommonArgs, cfg: &ExperimentConfig) -> PathBuf {
    common.out.join(&cfg.name)
}

fn n_threads() -> usize {
    std::env::var("WAVG_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Runs `train_run` for each seed, using up to `WAVG_THREADS` worker threads.
fn run_seeds(config: &RunConfig, seeds: &[u64]) -> Result<Vec<RunArtifacts>> {
    let threads = n_threads().min(seeds.len().max(1));
    if threads <= 1 {
        return seeds.iter().map(|&s| train_run(config, s)).collect();
    }
    let mut slots: Vec<Option<Result<RunArtifacts>>> = seeds.iter().map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut pending: Vec<(usize, u64)> = seeds.iter().copied().enumerate().collect();
        let chunk = pending.len().div_ceil(threads);
        let mut handles = Vec::new();
        let mut slices: Vec<&mut [Option<Result<RunArtifacts>>]> = Vec::new();
        let mut rest = slots.as_mut_slice();
        while !rest.is_empty() {
            let take = chunk.min(rest.len());
            let (head, tail) = rest.split_at_mut(take);
            slices.push(head);
            rest = tail;
        }
        for slice in slices {
            let work: Vec<(usize, u64)> = pending.drain(..slice.len()).collect();
            handles.push(scope.spawn(move || {
                for (slot, (_, seed)) in slice.iter_mut().zip(&work) {
                    *slot = Some(train_run(config, *seed));
                }
            }));
        }
        for h in handles {
            h.join().expect("worker thread panicked");
        }
    });
    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}

fn cmd_train(common: &CommonArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = experiment_dir(common, &cfg);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("resolved_config.toml"), cfg.resolved_toml()?)?;

    let runs = run_seeds(&cfg.run, &cfg.seeds)?;
    for run in &runs {
        let seed = run.record.seed;
        println!("== seed {seed} ==");
        if let Some(diag) = &run.record.failed {
            println!("run diverged: {diag}");
        }
        write_run_artifacts(&dir.join(seed.to_string()), &cfg.run, run)?;
        for line in summary_lines(run)? {
            println!("  {line}");
        }
    }
    println!("wrote {} run(s) under {}", runs.len(), dir.display());
    Ok(())
}

fn best_val_acc(run: &RunArtifacts) -> f64 {
    run.record
        .best_val_acc
        .as_ref()
        .map_or(f64::NAN, |v| v.val_acc)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn cmd_ablate(common: &CommonArgs, kind: AblationKind, lrs: &[f64]) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = experiment_dir(common, &cfg);
    fs::create_dir_all(&dir)?;

    match kind {
        AblationKind::Bootstrap => {
            let mut out = String::from("seed,unswapped_ema_val_acc,swapped_ema_val_acc\n");
            let mut plain_accs = Vec::new();
            let mut swapped_accs = Vec::new();
            for &seed in &cfg.seeds {
                let (plain, swapped) = bootstrap_ablation(&cfg.run, seed)?;
                let (p, s) = (best_val_acc(&plain), best_val_acc(&swapped));
                plain_accs.push(p);
                swapped_accs.push(s);
                out.push_str(&format!("{seed},{p},{s}\n"));
            }
            let (pm, ps) = mean_std(&plain_accs);
            let (sm, ss) = mean_std(&swapped_accs);
            out.push_str(&format!("mean,{pm},{sm}\nstd,{ps},{ss}\n"));
            let path = dir.join("ablation_bootstrap.csv");
            fs::write(&path, &out)?;
            print!("{out}");
            println!("wrote {}", path.display());
        }
        AblationKind::ConstantLr => {
            let mut out = String::from(
                "seed,freeze_epoch,cosine_ema_val_acc,frozen_ema_val_acc,cosine_noisy_acc,frozen_noisy_acc\n",
            );
            for &seed in &cfg.seeds {
                let (base, frozen) = constant_lr_ablation(&cfg.run, seed)?;
                let freeze = base.record.best_val_acc.as_ref().map_or(0, |v| v.epoch);
                let noisy_final = |r: &RunArtifacts| {
                    r.record
                        .epochs
                        .last()
                        .and_then(|e| e.train_baseline.as_ref())
                        .and_then(|t| t.noisy)
                        .unwrap_or(f64::NAN)
                };
                out.push_str(&format!(
                    "{seed},{freeze},{},{},{},{}\n",
                    best_val_acc(&base),
                    best_val_acc(&frozen),
                    noisy_final(&base),
                    noisy_final(&frozen)
                ));
            }
            let path = dir.join("ablation_constant_lr.csv");
            fs::write(&path, &out)?;
            print!("{out}");
            println!("wrote {}", path.display());
        }
        AblationKind::BnPolicy => {
            // per-decay best validation accuracy under each BN policy
            let mut out = String::from("seed,decay,batch_ema_best_val_acc,recompute_best_val_acc\n");
            for &seed in &cfg.seeds {
                let mut batch_cfg = cfg.run.clone();
                batch_cfg.bn_policy = BnPolicy::BatchEma;
                let mut rec_cfg = cfg.run.clone();
                rec_cfg.bn_policy = BnPolicy::RecomputeEachEpoch;
                let batch = train_run(&batch_cfg, seed)?;
                let rec = train_run(&rec_cfg, seed)?;
                for (i, &decay) in cfg.run.ema_decays.iter().enumerate() {
                    let best = |r: &RunArtifacts| {
                        r.record
                            .epochs
                            .iter()
                            .map(|e| e.ema[i].val_acc)
                            .fold(f64::NEG_INFINITY, f64::max)
                    };
                    out.push_str(&format!("{seed},{decay},{},{}\n", best(&batch), best(&rec)));
                }
            }
            let path = dir.join("ablation_bn_policy.csv");
            fs::write(&path, &out)?;
            print!("{out}");
            println!("wrote {}", path.display());
        }
        AblationKind::LrSweep => {
            let rows = lr_sweep(&cfg.run, lrs, &cfg.seeds)?;
            let mut out = String::from("lr,seed,baseline_best_val_acc,ema_best_val_acc,diverged\n");
            for r in &rows {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.lr,
                    r.seed,
                    r.baseline_best_val_acc.map_or("".into(), |v| v.to_string()),
                    r.ema_best_val_acc.map_or("".into(), |v| v.to_string()),
                    r.diverged
                ));
            }
            let path = dir.join("ablation_lr_sweep.csv");
            fs::write(&path, &out)?;
            print!("{out}");
            println!("wrote {}", path.display());
        }
    }

    // label-noise extras: matched-clean memorization comparison
    if cfg.run.noise.is_some() && matches!(kind, AblationKind::ConstantLr) {
        for &seed in cfg.seeds.first().iter().copied() {
            let run = train_run(&cfg.run, seed)?;
            let curves = memorization_curve(&run.record)?;
            for c in &curves {
                if let Some(n) = noisy_acc_at_matched_clean(c, 0.9) {
                    println!("memorization at 90% clean ({}): {:.4}", c.model, n);
                }
            }
        }
    }
    Ok(())
}

fn cmd_report(common: &CommonArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = experiment_dir(common, &cfg);
    generate_report(&dir)?;
    for file in ["summary.csv", "calibration.csv", "churn.csv"] {
        let path = dir.join(file);
        println!("--- {} ---", path.display());
        print!("{}", fs::read_to_string(&path)?);
    }
    Ok(())
}

/// Target train/test split for linear evaluation: the pool plus held-out test
/// samples, split by the dataset seed exactly as in training.
fn target_split(config: &RunConfig) -> Result<(wavg::data::Dataset, wavg::data::Dataset)> {
    let full_spec = DatasetSpec {
        n_samples: config.dataset.n_samples + config.n_test,
        ..config.dataset.clone()
    };
    let full = synthesize(&full_spec)?;
    let mut rng = SeedState::new(config.dataset.seed).rng("test_split");
    let frac = config.dataset.n_samples as f64 / full.len() as f64;
    let (pool_idx, test_idx) = stratified_split(&full.labels, frac, &mut rng);
    Ok((full.select(&pool_idx), full.select(&test_idx)))
}

fn cmd_linear_eval(common: &CommonArgs, checkpoint: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let ckpt = Checkpoint::<Scalar>::load(checkpoint)?;
    let backbone = ckpt.into_model()?;
    let (train, test) = target_split(&cfg.run)?;
    let seed = cfg.seeds.first().copied().unwrap_or(1);
    let acc = linear_eval(&backbone, &train, &test, cfg.run.batch_size, seed)?;
    println!(
        "linear_eval {} target_acc {acc:.4}",
        checkpoint.display()
    );
    Ok(())
}

fn cmd_churn(common: &CommonArgs) -> Result<()> {
    let cfg = load_config(common)?;
    if cfg.seeds.len() < 2 {
        return Err(wavg::error::Error::input(
            "churn needs at least 2 seeds (pass --seed a,b,...)",
        ));
    }
    let runs = run_seeds(&cfg.run, &cfg.seeds)?;
    let mut sets = Vec::new();
    for run in &runs {
        if let Some(diag) = &run.record.failed {
            return Err(wavg::error::Error::Diverged(diag.clone()));
        }
        let seed = run.record.seed;
        let b_logits = run.models.baseline_final.forward_eval(&run.test.features)?;
        let baseline = PredictionSet::from_logits(
            b_logits,
            run.test.labels.clone(),
            format!("baseline_seed{seed}"),
        )?;
        let (ema_model, _) = run
            .models
            .ema_best_loss
            .as_ref()
            .ok_or_else(|| wavg::error::Error::contract("run produced no EMA(loss) model"))?;
        let e_logits = ema_model.forward_eval(&run.test.features)?;
        let ema = PredictionSet::from_logits(
            e_logits,
            run.test.labels.clone(),
            format!("ema_loss_seed{seed}"),
        )?;
        sets.push((baseline, ema));
    }
    let result = pairwise_stats(&cfg.seeds, &sets)?;
    println!(
        "baseline  churn {:.4} +/- {:.4}   js {:.6} +/- {:.6}",
        result.baseline_churn.mean,
        result.baseline_churn.std,
        result.baseline_js.mean,
        result.baseline_js.std
    );
    println!(
        "ema_loss  churn {:.4} +/- {:.4}   js {:.6} +/- {:.6}",
        result.ema_churn.mean, result.ema_churn.std, result.ema_js.mean, result.ema_js.std
    );
    let dir = experiment_dir(common, &cfg);
    fs::create_dir_all(&dir)?;
    let path = dir.join("churn_experiment.json");
    fs::write(&path, serde_json::to_string_pretty(&result)?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(common) => cmd_train(common),
        Command::Ablate { common, kind, lrs } => cmd_ablate(common, *kind, lrs),
        Command::Report { common } => cmd_report(common),
        Command::LinearEval { common, checkpoint } => cmd_linear_eval(common, checkpoint),
        Command::Churn(common) => cmd_churn(common),
        Command::DefaultConfig => {
            print!("{}", default_config_toml());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
