//! Acceptance gate: exact oracle checks plus directional reproduction of the
//! qualitative training-dynamics claims on desk-scale synthetic tasks.
//!
//! Each criterion prints a single `acceptance NN <name>: PASS|FAIL` line.

use std::process::Command;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wavg::averaging::{effective_decay, recompute_bn, BnPolicy, EmaState};
use wavg::config::{default_config_toml, ExperimentConfig};
use wavg::harness::{constant_lr_ablation, train_run, RunArtifacts, RunConfig};
use wavg::metrics::{
    accuracy_nll, apply_temperature, churn, ece_equal_mass, js_divergence, temperature_scale,
    EceConfig, PredictionSet,
};
use wavg::nn::gradcheck::grad_check;
use wavg::nn::params::{ParamLayout, ParamName, ParamVector};
use wavg::nn::{BnStats, MlpSpec, Model};
use wavg::tensor::Tensor2;

fn criterion(name: &str, f: impl FnOnce() -> Result<(), String>) {
    match f() {
        Ok(()) => println!("acceptance {name}: PASS"),
        Err(msg) => {
            println!("acceptance {name}: FAIL ({msg})");
            panic!("acceptance {name} failed: {msg}");
        }
    }
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn default_run_config() -> RunConfig {
    ExperimentConfig::from_toml_str(default_config_toml(), &[])
        .expect("default config parses")
        .run
}

/// Three seeds of the default desk-scale task, shared by the generalization,
/// churn and bootstrap criteria.
fn shared_runs() -> &'static Vec<RunArtifacts> {
    static RUNS: OnceLock<Vec<RunArtifacts>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let cfg = default_run_config();
        [1u64, 2, 3]
            .iter()
            .map(|&s| train_run(&cfg, s).expect("shared run"))
            .collect()
    })
}

fn scalar_vec(v: f64) -> ParamVector<f64> {
    let layout = Arc::new(ParamLayout::new(vec![(0, ParamName::Weight, 1)]));
    ParamVector::from_values(layout, vec![v]).unwrap()
}

fn random_preds(
    rng: &mut ChaCha8Rng,
    n: usize,
    k: usize,
) -> PredictionSet<f64> {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..k).map(|_| rng.gen_range(-4.0..4.0)).collect())
        .collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    PredictionSet::from_logits(Tensor2::from_rows(&rows).unwrap(), labels, "rand").unwrap()
}

#[test]
fn acceptance_01_gradient_correctness() {
    criterion("01 gradient-correctness", || {
        let start = std::time::Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let specs = [
            MlpSpec::plain(vec![4, 3]).unwrap(),
            MlpSpec::plain(vec![5, 8, 3]).unwrap(),
            MlpSpec::new(vec![4, 6, 3], vec![true]).unwrap(),
            MlpSpec::new(vec![6, 8, 5, 4], vec![true, true]).unwrap(),
            MlpSpec::new(vec![3, 10, 2], vec![true]).unwrap(),
        ];
        let mut worst: f64 = 0.0;
        for draw in 0..10 {
            let spec = specs[draw % specs.len()].clone();
            let d = spec.input_width();
            let k = spec.n_classes();
            let model = Model::init(spec, &mut rng);
            let n = 6;
            let batch = Tensor2::new(
                n,
                d,
                (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let err = grad_check(&model, &batch, &labels, 1e-5).map_err(|e| e.to_string())?;
            worst = worst.max(err);
        }
        ensure(worst < 1e-4, format!("worst relative error {worst}"))?;
        ensure(
            start.elapsed().as_secs() < 10,
            format!("took {:?}", start.elapsed()),
        )
    });
}

#[test]
fn acceptance_02_ema_closed_form() {
    criterion("02 ema-closed-form", || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bn = BnStats::<f64>::empty();
        for _ in 0..100 {
            let alpha: f64 = rng.gen_range(0.0..0.9999);
            let len = rng.gen_range(1..=100);
            let x0: f64 = rng.gen_range(-5.0..5.0);
            let xs: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();

            let mut st = EmaState::new(alpha, 1, false, &scalar_vec(x0), &bn);
            let mut brute = x0;
            for &x in &xs {
                st.update(&scalar_vec(x), &bn).map_err(|e| e.to_string())?;
                brute = alpha * brute + (1.0 - alpha) * x;
            }
            let got = st.averaged_params.values()[0];
            ensure(
                (got - brute).abs() < 1e-12,
                format!("ema mismatch {got} vs {brute} (alpha {alpha}, len {len})"),
            )?;
        }

        // warm-up at t = 0: effective decay is exactly min(alpha, 0.1)
        for &alpha in &[0.5, 0.998, 0.05] {
            let st = EmaState::new(alpha, 16, true, &scalar_vec(0.0), &bn);
            let expected = alpha.min(0.1);
            ensure(
                st.current_decay() == expected,
                format!("warm-up decay at t=0 is {} not {expected}", st.current_decay()),
            )?;
        }
        Ok(())
    });
}

#[test]
fn acceptance_03_decay_equivalence() {
    criterion("03 decay-equivalence", || {
        let table: [(f64, f64); 5] = [
            (0.999875, 0.998),
            (0.99975, 0.996),
            (0.9995, 0.992),
            (0.999, 0.984),
            (0.998, 0.968),
        ];
        for (per_step, per_16) in table {
            let got = effective_decay(per_step, 1, 16);
            ensure(
                (got - per_16).abs() < 1e-3,
                format!("{per_step}^16 = {got}, expected {per_16}"),
            )?;
        }
        let up: f64 = effective_decay(0.984, 16, 1);
        ensure(
            (up - 0.999).abs() < 5e-4,
            format!("0.984^(1/16) = {up}, expected 0.999"),
        )
    });
}

#[test]
fn acceptance_04_metric_oracles() {
    criterion("04 metric-oracles", || {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for _ in 0..50 {
            let k = rng.gen_range(2..=5);
            let n = rng.gen_range(4..=60);
            let a = random_preds(&mut rng, n, k);
            let b = random_preds(&mut rng, n, k);

            // churn oracle: direct argmax disagreement count
            let mut disagree = 0usize;
            for i in 0..n {
                let top = |p: &PredictionSet<f64>| {
                    let row = p.probs.row(i);
                    let mut t = 0;
                    for (j, &v) in row.iter().enumerate() {
                        if v > row[t] {
                            t = j;
                        }
                    }
                    t
                };
                if top(&a) != top(&b) {
                    disagree += 1;
                }
            }
            let c = churn(&a, &b).map_err(|e| e.to_string())?;
            ensure(
                c == disagree as f64 / n as f64,
                format!("churn {c} vs oracle {}", disagree as f64 / n as f64),
            )?;

            // JS oracle: 0.5 KL(p||m) + 0.5 KL(q||m), per sample, averaged
            let mut js_total = 0.0;
            for i in 0..n {
                let (p, q) = (a.probs.row(i), b.probs.row(i));
                let mut js = 0.0;
                for j in 0..k {
                    let m = 0.5 * (p[j] + q[j]);
                    if p[j] > 0.0 {
                        js += 0.5 * p[j] * (p[j] / m).ln();
                    }
                    if q[j] > 0.0 {
                        js += 0.5 * q[j] * (q[j] / m).ln();
                    }
                }
                js_total += js;
            }
            let js_oracle = js_total / n as f64;
            let js = js_divergence(&a, &b).map_err(|e| e.to_string())?;
            ensure(
                (js - js_oracle).abs() < 1e-12,
                format!("js {js} vs oracle {js_oracle}"),
            )?;
            ensure(
                js <= std::f64::consts::LN_2 + 1e-12,
                format!("js {js} exceeds ln 2"),
            )?;

            // equal-mass ECE oracle: sort ascending by confidence, remainder
            // to the lowest-confidence bins
            let m_bins = rng.gen_range(1..=n.min(7));
            let conf: Vec<f64> = (0..n).map(|i| a.probs.row(i)[a.top_class(i)]).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| conf[i].partial_cmp(&conf[j]).unwrap().then(i.cmp(&j)));
            let mut oracle_ece = 0.0;
            let mut cursor = 0;
            for bin in 0..m_bins {
                let size = n / m_bins + usize::from(bin < n % m_bins);
                let idx = &order[cursor..cursor + size];
                cursor += size;
                let acc = idx
                    .iter()
                    .filter(|&&i| a.top_class(i) == a.labels[i])
                    .count() as f64
                    / size as f64;
                let mean_conf = idx.iter().map(|&i| conf[i]).sum::<f64>() / size as f64;
                oracle_ece += size as f64 / n as f64 * (acc - mean_conf).abs();
            }
            let ece = ece_equal_mass(&a, &EceConfig { n_bins: m_bins }).map_err(|e| e.to_string())?;
            ensure(
                (ece - oracle_ece).abs() < 1e-12,
                format!("ece {ece} vs oracle {oracle_ece}"),
            )?;

            // accuracy / NLL oracle
            let mut correct = 0usize;
            let mut nll_total = 0.0;
            for i in 0..n {
                if a.top_class(i) == a.labels[i] {
                    correct += 1;
                }
                nll_total -= a.probs.row(i)[a.labels[i]].max(1e-12).ln();
            }
            let (acc, nll) = accuracy_nll(&a);
            ensure(acc == correct as f64 / n as f64, "accuracy oracle mismatch")?;
            ensure(
                (nll - nll_total / n as f64).abs() < 1e-12,
                format!("nll {nll} vs oracle {}", nll_total / n as f64),
            )?;

            // temperature scaling: holdout NLL never above the tau = 1 value,
            // top-1 predictions unchanged
            let (tau, _) =
                temperature_scale(&a, &b, &EceConfig { n_bins: 1 }).map_err(|e| e.to_string())?;
            let scaled = apply_temperature(&a, tau).map_err(|e| e.to_string())?;
            let (acc_scaled, nll_scaled) = accuracy_nll(&scaled);
            ensure(
                nll_scaled <= nll + 1e-9,
                format!("temperature raised holdout NLL {nll} -> {nll_scaled}"),
            )?;
            ensure(acc_scaled == acc, "temperature changed top-1 accuracy")?;
            for i in 0..n {
                ensure(scaled.top_class(i) == a.top_class(i), "top class changed")?;
            }
        }
        Ok(())
    });
}

#[test]
fn acceptance_05_non_interference() {
    criterion("05 non-interference", || {
        let mut with = default_run_config();
        with.dataset.n_samples = 1200;
        with.n_test = 200;
        with.schedule.total_epochs = 6;
        with.schedule.warmup_epochs = 1;
        with.swa_enabled = true;
        let mut without = with.clone();
        without.ema_decays = vec![];
        without.swa_enabled = false;

        let a = train_run(&with, 17).map_err(|e| e.to_string())?;
        let b = train_run(&without, 17).map_err(|e| e.to_string())?;
        ensure(
            a.models.baseline_final.params.values() == b.models.baseline_final.params.values(),
            "baseline parameters differ when averaging is attached",
        )?;
        ensure(
            a.models.baseline_final.bn.layers == b.models.baseline_final.bn.layers,
            "baseline BN statistics differ when averaging is attached",
        )
    });
}

#[test]
fn acceptance_06_bn_recompute() {
    criterion("06 bn-recompute", || {
        // one batch through an identity first layer: recomputed stats must be
        // the batch's own mean and population variance
        let spec = MlpSpec::new(vec![2, 2, 2], vec![true]).unwrap();
        let mut params = ParamVector::<f64>::zeros(spec.layout());
        {
            let w = params.segment_mut(0, ParamName::Weight).unwrap();
            w[0] = 1.0;
            w[3] = 1.0;
        }
        params.segment_mut(0, ParamName::Gamma).unwrap().fill(1.0);
        let model = Model::from_parts(spec.clone(), params, BnStats::fresh(&spec.bn_widths()));
        let data =
            Tensor2::new(4, 2, vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 6.0, 8.0]).unwrap();
        let stats = recompute_bn(&model, &data, 4).map_err(|e| e.to_string())?;
        let expect = [(3.0, 3.5), (5.0, 5.0)];
        for (j, (mean, var)) in expect.iter().enumerate() {
            ensure(
                (stats.layers[0].running_mean[j] - mean).abs() < 1e-10
                    && (stats.layers[0].running_var[j] - var).abs() < 1e-10,
                format!(
                    "recomputed stats ({}, {}) differ from batch stats ({mean}, {var})",
                    stats.layers[0].running_mean[j], stats.layers[0].running_var[j]
                ),
            )?;
        }

        // desk-scale ordering: the 0.998 EMA validated with per-epoch BN
        // recompute beats its batch-EMA-stats counterpart at >= 80% of
        // post-warmup epochs
        let mut cfg = default_run_config();
        cfg.dataset.n_classes = 10;
        cfg.dataset.class_separation = 0.45;
        cfg.schedule.base_lr = 0.4;
        cfg.split_fraction = 0.5;
        cfg.ema_decays = vec![0.998];
        let mut recompute_cfg = cfg.clone();
        recompute_cfg.bn_policy = BnPolicy::RecomputeEachEpoch;
        let batch = train_run(&cfg, 2).map_err(|e| e.to_string())?;
        let rec = train_run(&recompute_cfg, 2).map_err(|e| e.to_string())?;

        let warmup = cfg.schedule.warmup_epochs;
        let total = cfg.schedule.total_epochs - warmup;
        let wins = (warmup..cfg.schedule.total_epochs)
            .filter(|&e| {
                rec.record.epochs[e].ema[0].val_acc >= batch.record.epochs[e].ema[0].val_acc
            })
            .count();
        ensure(
            wins as f64 >= 0.8 * total as f64,
            format!("recompute >= batch_ema at only {wins}/{total} post-warmup epochs"),
        )
    });
}

#[test]
fn acceptance_07_generalization_trend() {
    criterion("07 generalization-trend", || {
        let runs = shared_runs();
        let mut ema_wins = 0;
        let mut base_losses = Vec::new();
        let mut ema_losses = Vec::new();
        for run in runs.iter() {
            let test = &run.test;
            let base_logits = run
                .models
                .baseline_final
                .forward_eval(&test.features)
                .map_err(|e| e.to_string())?;
            let base =
                PredictionSet::from_logits(base_logits, test.labels.clone(), "b").unwrap();
            let (base_acc, base_nll) = accuracy_nll(&base);

            let (ema_acc_model, _) = run
                .models
                .ema_best_acc
                .as_ref()
                .ok_or("missing EMA best-acc model")?;
            let acc_logits = ema_acc_model
                .forward_eval(&test.features)
                .map_err(|e| e.to_string())?;
            let ema_acc =
                accuracy_nll(&PredictionSet::from_logits(acc_logits, test.labels.clone(), "e").unwrap())
                    .0;
            if ema_acc >= base_acc {
                ema_wins += 1;
            }

            let (ema_loss_model, _) = run
                .models
                .ema_best_loss
                .as_ref()
                .ok_or("missing EMA best-loss model")?;
            let loss_logits = ema_loss_model
                .forward_eval(&test.features)
                .map_err(|e| e.to_string())?;
            let ema_nll =
                accuracy_nll(&PredictionSet::from_logits(loss_logits, test.labels.clone(), "l").unwrap())
                    .1;
            base_losses.push(base_nll);
            ema_losses.push(ema_nll);
        }
        ensure(
            ema_wins >= 2,
            format!("EMA test accuracy >= baseline in only {ema_wins}/3 seeds"),
        )?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        ensure(
            mean(&ema_losses) <= mean(&base_losses),
            format!(
                "mean EMA test loss {} above baseline {}",
                mean(&ema_losses),
                mean(&base_losses)
            ),
        )
    });
}

fn noise_config() -> RunConfig {
    let mut cfg = default_run_config();
    cfg.dataset.n_classes = 10;
    cfg.dataset.class_separation = 0.45;
    cfg.dataset.n_samples = 5000;
    cfg.n_test = 1000;
    cfg.noise = Some(wavg::data::NoiseSpec { rate: 0.4, seed: 9 });
    cfg.track_test_curve = true;
    cfg
}

/// Noisy-label train accuracy at the epoch where clean-train accuracy first
/// reaches `target`, linearly interpolated.
fn noisy_at_clean(clean: &[f64], noisy: &[f64], target: f64) -> Option<f64> {
    for i in 0..clean.len() {
        if clean[i] >= target {
            if i == 0 {
                return Some(noisy[0]);
            }
            let (c0, c1) = (clean[i - 1], clean[i]);
            let t = if (c1 - c0).abs() < 1e-15 {
                1.0
            } else {
                (target - c0) / (c1 - c0)
            };
            return Some(noisy[i - 1] + t * (noisy[i] - noisy[i - 1]));
        }
    }
    None
}

#[test]
fn acceptance_08_label_noise_trend() {
    criterion("08 label-noise-trend", || {
        let cfg = noise_config();
        for seed in [1u64, 2, 3] {
            let run = train_run(&cfg, seed).map_err(|e| e.to_string())?;
            let rec = &run.record;
            ensure(rec.failed.is_none(), "noise run diverged")?;

            // peak EMA clean-test accuracy vs the baseline's final value
            let base_final = rec.epochs.last().unwrap().test_baseline.unwrap();
            let ema_peak = rec
                .epochs
                .iter()
                .flat_map(|e| e.test_ema.as_ref().unwrap().iter().copied())
                .fold(f64::NEG_INFINITY, f64::max);
            ensure(
                ema_peak - base_final >= 0.02,
                format!("seed {seed}: EMA peak {ema_peak} vs baseline final {base_final}"),
            )?;

            // matched 90% clean-train accuracy: EMA memorizes less
            let d = rec.best_val_acc.as_ref().ok_or("no verdict")?.decay_index;
            let clean_b: Vec<f64> = rec
                .epochs
                .iter()
                .map(|e| e.train_baseline.as_ref().unwrap().clean)
                .collect();
            let noisy_b: Vec<f64> = rec
                .epochs
                .iter()
                .map(|e| e.train_baseline.as_ref().unwrap().noisy.unwrap())
                .collect();
            let clean_e: Vec<f64> = rec
                .epochs
                .iter()
                .map(|e| e.train_ema.as_ref().unwrap()[d].clean)
                .collect();
            let noisy_e: Vec<f64> = rec
                .epochs
                .iter()
                .map(|e| e.train_ema.as_ref().unwrap()[d].noisy.unwrap())
                .collect();
            let mb = noisy_at_clean(&clean_b, &noisy_b, 0.9)
                .ok_or(format!("seed {seed}: baseline never reached 90% clean"))?;
            let me = noisy_at_clean(&clean_e, &noisy_e, 0.9)
                .ok_or(format!("seed {seed}: EMA never reached 90% clean"))?;
            ensure(
                me < mb,
                format!("seed {seed}: EMA memorization {me} not below baseline {mb}"),
            )?;
        }

        // constant-LR ablation in a high-LR regime: the post-freeze EMA test
        // accuracy drop is smaller when the learning rate is frozen
        let mut ablation_cfg = noise_config();
        ablation_cfg.schedule.base_lr = 0.8;
        ablation_cfg.weight_decay = 1e-3;
        let mut cosine_drops = Vec::new();
        let mut frozen_drops = Vec::new();
        for seed in [1u64, 2, 3] {
            let (base, frozen) =
                constant_lr_ablation(&ablation_cfg, seed).map_err(|e| e.to_string())?;
            let verdict = base.record.best_val_acc.as_ref().ok_or("no verdict")?;
            let (freeze, d) = (verdict.epoch, verdict.decay_index);
            let drop = |r: &RunArtifacts| {
                let series: Vec<f64> = r
                    .record
                    .epochs
                    .iter()
                    .map(|e| e.test_ema.as_ref().unwrap()[d])
                    .collect();
                let peak = series[freeze..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                peak - series.last().unwrap()
            };
            cosine_drops.push(drop(&base));
            frozen_drops.push(drop(&frozen));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        ensure(
            mean(&frozen_drops) < mean(&cosine_drops),
            format!(
                "frozen-LR drop {} not below cosine drop {}",
                mean(&frozen_drops),
                mean(&cosine_drops)
            ),
        )
    });
}

#[test]
fn acceptance_09_churn_trend() {
    criterion("09 churn-trend", || {
        let runs = shared_runs();
        let mut sets = Vec::new();
        for run in runs.iter() {
            let base_logits = run
                .models
                .baseline_final
                .forward_eval(&run.test.features)
                .map_err(|e| e.to_string())?;
            let base =
                PredictionSet::from_logits(base_logits, run.test.labels.clone(), "b").unwrap();
            let (ema_model, _) = run
                .models
                .ema_best_loss
                .as_ref()
                .ok_or("missing EMA best-loss model")?;
            let ema_logits = ema_model
                .forward_eval(&run.test.features)
                .map_err(|e| e.to_string())?;
            let ema =
                PredictionSet::from_logits(ema_logits, run.test.labels.clone(), "e").unwrap();
            sets.push((base, ema));
        }
        let mut base_churn = Vec::new();
        let mut ema_churn = Vec::new();
        let mut base_js = Vec::new();
        let mut ema_js = Vec::new();
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                base_churn.push(churn(&sets[i].0, &sets[j].0).map_err(|e| e.to_string())?);
                ema_churn.push(churn(&sets[i].1, &sets[j].1).map_err(|e| e.to_string())?);
                base_js.push(js_divergence(&sets[i].0, &sets[j].0).map_err(|e| e.to_string())?);
                ema_js.push(js_divergence(&sets[i].1, &sets[j].1).map_err(|e| e.to_string())?);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        ensure(
            mean(&ema_churn) < mean(&base_churn),
            format!(
                "mean EMA churn {} not below baseline {}",
                mean(&ema_churn),
                mean(&base_churn)
            ),
        )?;
        ensure(
            mean(&ema_js) < mean(&base_js),
            format!(
                "mean EMA JS {} not below baseline {}",
                mean(&ema_js),
                mean(&base_js)
            ),
        )
    });
}

#[test]
fn acceptance_10_bootstrap_ablation() {
    criterion("10 bootstrap-ablation", || {
        // large batches shrink the gradient noise the EMA feeds on, isolating
        // the cost of resetting the iterate to a trailing average
        let mut cfg = default_run_config();
        cfg.batch_size = 512;
        let mut plain_accs = Vec::new();
        let mut swapped_accs = Vec::new();
        for seed in [1u64, 2, 3] {
            let mut plain_cfg = cfg.clone();
            plain_cfg.bootstrap = false;
            let mut swapped_cfg = cfg.clone();
            swapped_cfg.bootstrap = true;
            let plain = train_run(&plain_cfg, seed).map_err(|e| e.to_string())?;
            let swapped = train_run(&swapped_cfg, seed).map_err(|e| e.to_string())?;
            plain_accs.push(plain.record.epochs.last().unwrap().baseline.val_acc);
            swapped_accs.push(swapped.record.epochs.last().unwrap().baseline.val_acc);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        ensure(
            mean(&swapped_accs) <= mean(&plain_accs),
            format!(
                "bootstrapped mean final val acc {} above unswapped {}",
                mean(&swapped_accs),
                mean(&plain_accs)
            ),
        )
    });
}

#[test]
fn acceptance_11_determinism() {
    criterion("11 determinism", || {
        let bin = env!("CARGO_BIN_EXE_wavg");
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let config_path = dir.path().join("config.toml");
        std::fs::write(
            &config_path,
            r#"name = "det"
seeds = [1, 2]

[run]
hidden_widths = [16]
batch_size = 32
ema_decays = [0.9, 0.99]
ema_period = 4

[run.dataset]
kind = "gaussian_blobs"
n_samples = 600
n_features = 6
n_classes = 3
class_separation = 1.5
seed = 11

[run.schedule]
kind = "warmup_cosine"
base_lr = 0.05
warmup_epochs = 1
total_epochs = 4
"#,
        )
        .map_err(|e| e.to_string())?;

        let invoke = |out: &str, verb: &str| -> Result<(), String> {
            let status = Command::new(bin)
                .args([verb, "--config"])
                .arg(&config_path)
                .arg("--out")
                .arg(dir.path().join(out))
                .output()
                .map_err(|e| e.to_string())?;
            ensure(
                status.status.success(),
                format!("{verb} failed: {}", String::from_utf8_lossy(&status.stderr)),
            )
        };
        invoke("a", "train")?;
        invoke("b", "train")?;
        invoke("a", "report")?;
        invoke("b", "report")?;

        let read = |out: &str, rel: &str| -> Result<Vec<u8>, String> {
            std::fs::read(dir.path().join(out).join("det").join(rel)).map_err(|e| {
                format!("missing {rel} under {out}: {e}")
            })
        };
        for rel in [
            "1/record.jsonl",
            "2/record.jsonl",
            "1/preds_test_baseline.csv",
            "1/preds_val_ema_loss.csv",
            "1/ckpt_ema_acc.json",
            "summary.csv",
            "calibration.csv",
            "churn.csv",
            "resolved_config.toml",
        ] {
            ensure(
                read("a", rel)? == read("b", rel)?,
                format!("{rel} differs between identical invocations"),
            )?;
        }
        Ok(())
    });
}
