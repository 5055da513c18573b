//! Evaluation metrics: accuracy/NLL, prediction churn, Jensen-Shannon
//! divergence, equal-mass expected calibration error and post-hoc temperature
//! scaling. All divergences and likelihoods use natural-log units.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::loss::softmax_rows;
use crate::scalar::{real, Real};
use crate::tensor::Tensor2;

const PROB_FLOOR: f64 = 1e-12;

/// Predictions of one model over a fixed evaluation set.
#[derive(Debug, Clone)]
pub struct PredictionSet<F> {
    pub probs: Tensor2<F>,
    pub labels: Vec<usize>,
    pub run_id: String,
    pub logits: Option<Tensor2<F>>,
}

impl<F: Real> PredictionSet<F> {
    pub fn from_logits(logits: Tensor2<F>, labels: Vec<usize>, run_id: impl Into<String>) -> Result<Self> {
        if labels.len() != logits.rows() {
            return Err(Error::input("label count does not match logit rows"));
        }
        let probs = softmax_rows(&logits);
        Ok(Self {
            probs,
            labels,
            run_id: run_id.into(),
            logits: Some(logits),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.probs.cols()
    }

    /// Top class of one sample; ties broken by lowest class index.
    pub fn top_class(&self, i: usize) -> usize {
        argmax(self.probs.row(i))
    }

    /// Writes the prediction dump: `sample_id,label,logit_0..logit_{C-1}`.
    pub fn dump_csv(&self, path: &Path) -> Result<()> {
        let logits = self
            .logits
            .as_ref()
            .ok_or_else(|| Error::input("prediction dump requires logits"))?;
        let mut out = String::new();
        out.push_str("sample_id,label");
        for c in 0..logits.cols() {
            out.push_str(&format!(",logit_{c}"));
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&format!("{},{}", i, self.labels[i]));
            for &v in logits.row(i) {
                out.push_str(&format!(",{}", v.to_f64_lossy()));
            }
            out.push('\n');
        }
        let mut f = fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn load_csv(path: &Path, run_id: impl Into<String>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::input("empty prediction dump"))?;
        let n_cols = header.split(',').count();
        if n_cols < 3 || !header.starts_with("sample_id,label,logit_0") {
            return Err(Error::input("malformed prediction dump header"));
        }
        let n_classes = n_cols - 2;
        let mut labels = Vec::new();
        let mut data: Vec<F> = Vec::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != n_cols {
                return Err(Error::input("ragged prediction dump row"));
            }
            labels.push(
                fields[1]
                    .parse::<usize>()
                    .map_err(|e| Error::input(format!("bad label: {e}")))?,
            );
            for f in &fields[2..] {
                let v: f64 = f
                    .parse()
                    .map_err(|e| Error::input(format!("bad logit: {e}")))?;
                data.push(real(v));
            }
        }
        let rows = labels.len();
        let logits = Tensor2::new(rows, n_classes, data)?;
        Self::from_logits(logits, labels, run_id)
    }
}

fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_aligned<F: Real>(a: &PredictionSet<F>, b: &PredictionSet<F>) -> Result<()> {
    if a.len() != b.len() || a.n_classes() != b.n_classes() {
        return Err(Error::input("prediction sets are not aligned"));
    }
    Ok(())
}

/// Fraction of samples where the two models' top classes differ.
pub fn churn<F: Real>(a: &PredictionSet<F>, b: &PredictionSet<F>) -> Result<F> {
    check_aligned(a, b)?;
    let n = a.len();
    if n == 0 {
        return Err(Error::input("empty prediction sets"));
    }
    let disagreements = (0..n).filter(|&i| a.top_class(i) != b.top_class(i)).count();
    Ok(F::from_usize_lossy(disagreements) / F::from_usize_lossy(n))
}

/// Mean per-sample Jensen-Shannon divergence (natural log), with
/// `0 * log(0/x)` taken as 0.
pub fn js_divergence<F: Real>(a: &PredictionSet<F>, b: &PredictionSet<F>) -> Result<F> {
    check_aligned(a, b)?;
    let n = a.len();
    if n == 0 {
        return Err(Error::input("empty prediction sets"));
    }
    let half = real::<F>(0.5);
    let mut total = F::zero();
    for i in 0..n {
        let p = a.probs.row(i);
        let q = b.probs.row(i);
        let mut js = F::zero();
        for (&pj, &qj) in p.iter().zip(q) {
            let m = half * (pj + qj);
            if pj > F::zero() {
                js = js + half * pj * (pj / m).ln();
            }
            if qj > F::zero() {
                js = js + half * qj * (qj / m).ln();
            }
        }
        total = total + js;
    }
    Ok(total / F::from_usize_lossy(n))
}

#[derive(Debug, Clone, Copy)]
pub struct EceConfig {
    pub n_bins: usize,
}

impl Default for EceConfig {
    fn default() -> Self {
        Self { n_bins: 100 }
    }
}

/// Expected calibration error with equal-mass binning.
///
/// Samples are sorted by confidence (stable in the original index); the `N %
/// M` leftover samples go to the lowest-confidence bins, so bin sizes differ
/// by at most one.
pub fn ece_equal_mass<F: Real>(preds: &PredictionSet<F>, cfg: &EceConfig) -> Result<F> {
    let n = preds.len();
    let m = cfg.n_bins;
    if m == 0 || m > n {
        return Err(Error::input(format!("need 1 <= bins <= samples, got {m} bins for {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let conf: Vec<F> = (0..n)
        .map(|i| preds.probs.row(i)[preds.top_class(i)])
        .collect();
    order.sort_by(|&i, &j| conf[i].partial_cmp(&conf[j]).unwrap().then(i.cmp(&j)));

    let base = n / m;
    let rem = n % m;
    let mut ece = F::zero();
    let mut cursor = 0;
    for bin in 0..m {
        let size = base + usize::from(bin < rem);
        let idx = &order[cursor..cursor + size];
        cursor += size;
        let mut acc = F::zero();
        let mut avg_conf = F::zero();
        for &i in idx {
            if preds.top_class(i) == preds.labels[i] {
                acc = acc + F::one();
            }
            avg_conf = avg_conf + conf[i];
        }
        let size_f = F::from_usize_lossy(size);
        acc = acc / size_f;
        avg_conf = avg_conf / size_f;
        ece = ece + size_f / F::from_usize_lossy(n) * (acc - avg_conf).abs();
    }
    Ok(ece)
}

/// Top-1 accuracy and mean NLL of the true class (probability floored at
/// 1e-12 before the log).
pub fn accuracy_nll<F: Real>(preds: &PredictionSet<F>) -> (F, F) {
    let n = preds.len();
    let floor = real::<F>(PROB_FLOOR);
    let mut correct = 0usize;
    let mut nll = F::zero();
    for i in 0..n {
        if preds.top_class(i) == preds.labels[i] {
            correct += 1;
        }
        let p = preds.probs.row(i)[preds.labels[i]].max(floor);
        nll = nll - p.ln();
    }
    let n_f = F::from_usize_lossy(n.max(1));
    (F::from_usize_lossy(correct) / n_f, nll / n_f)
}

fn mean_nll_at_temperature<F: Real>(logits: &Tensor2<F>, labels: &[usize], tau: F) -> F {
    let mut scaled = logits.clone();
    for v in scaled.data_mut() {
        *v = *v / tau;
    }
    let probs = softmax_rows(&scaled);
    let floor = real::<F>(PROB_FLOOR);
    let mut nll = F::zero();
    for (i, &label) in labels.iter().enumerate() {
        nll = nll - probs.row(i)[label].max(floor).ln();
    }
    nll / F::from_usize_lossy(labels.len().max(1))
}

/// Rescales a prediction set's logits by `1/tau`.
pub fn apply_temperature<F: Real>(preds: &PredictionSet<F>, tau: F) -> Result<PredictionSet<F>> {
    let logits = preds
        .logits
        .as_ref()
        .ok_or_else(|| Error::input("temperature scaling requires logits"))?;
    let mut scaled = logits.clone();
    for v in scaled.data_mut() {
        *v = *v / tau;
    }
    PredictionSet::from_logits(scaled, preds.labels.clone(), preds.run_id.clone())
}

/// Fits a temperature on the holdout set by golden-section search over
/// `log tau in [ln 0.05, ln 20]` (tolerance 1e-4) and returns the temperature
/// together with the equal-mass ECE of the rescaled eval set.
///
/// Flat objectives tie-break toward `tau = 1`, which also guarantees the
/// holdout NLL never exceeds its unscaled value.
pub fn temperature_scale<F: Real>(
    holdout: &PredictionSet<F>,
    eval: &PredictionSet<F>,
    ece_cfg: &EceConfig,
) -> Result<(F, F)> {
    let holdout_logits = holdout
        .logits
        .as_ref()
        .ok_or_else(|| Error::input("temperature scaling requires holdout logits"))?;
    if eval.logits.is_none() {
        return Err(Error::input("temperature scaling requires eval logits"));
    }

    let objective = |log_tau: F| mean_nll_at_temperature(holdout_logits, &holdout.labels, log_tau.exp());

    let mut lo = real::<F>(0.05f64.ln());
    let mut hi = real::<F>(20f64.ln());
    let phi = real::<F>((5f64.sqrt() - 1.0) / 2.0);
    let tol = real::<F>(1e-4);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = objective(x1);
    let mut f2 = objective(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = objective(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = objective(x2);
        }
    }
    let mut tau = ((lo + hi) / real::<F>(2.0)).exp();
    let nll_at_one = objective(F::zero());
    let nll_at_tau = mean_nll_at_temperature(holdout_logits, &holdout.labels, tau);
    if nll_at_one <= nll_at_tau + real::<F>(1e-12) {
        tau = F::one();
    }
    let scaled_eval = apply_temperature(eval, tau)?;
    let ece = ece_equal_mass(&scaled_eval, ece_cfg)?;
    Ok((tau, ece))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preds_from_probs(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> PredictionSet<f64> {
        // go through logits = ln(p) so the set carries logits too
        let logit_rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|&p| p.max(1e-300).ln()).collect())
            .collect();
        let logits = Tensor2::from_rows(&logit_rows).unwrap();
        PredictionSet::from_logits(logits, labels, "test").unwrap()
    }

    #[test]
    fn churn_examples() {
        let a = preds_from_probs(
            vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.6, 0.4], vec![0.3, 0.7]],
            vec![0, 1, 0, 1],
        );
        assert_eq!(churn(&a, &a).unwrap(), 0.0);
        let mut flipped_rows = Vec::new();
        for i in 0..4 {
            let r = a.probs.row(i);
            flipped_rows.push(vec![r[1], r[0]]);
        }
        let b = preds_from_probs(flipped_rows, vec![0, 1, 0, 1]);
        assert_eq!(churn(&a, &b).unwrap(), 1.0);
        // exactly one disagreement out of 4
        let mut c_rows = Vec::new();
        for i in 0..4 {
            let r = a.probs.row(i);
            c_rows.push(if i == 2 { vec![r[1], r[0]] } else { vec![r[0], r[1]] });
        }
        let c = preds_from_probs(c_rows, vec![0, 1, 0, 1]);
        assert_eq!(churn(&a, &c).unwrap(), 0.25);
    }

    #[test]
    fn js_divergence_examples() {
        let p = preds_from_probs(vec![vec![1.0, 0.0]], vec![0]);
        let q = preds_from_probs(vec![vec![0.0, 1.0]], vec![0]);
        assert!(js_divergence(&p, &p).unwrap().abs() < 1e-12);
        assert!((js_divergence(&p, &q).unwrap() - 2.0f64.ln()).abs() < 1e-9);

        let a = preds_from_probs(vec![vec![0.8, 0.2]], vec![0]);
        let b = preds_from_probs(vec![vec![0.2, 0.8]], vec![0]);
        // term-by-term scalar oracle
        let m = [0.5, 0.5];
        let oracle = 0.5 * (0.8 * (0.8f64 / m[0]).ln() + 0.2 * (0.2f64 / m[1]).ln())
            + 0.5 * (0.2 * (0.2f64 / m[0]).ln() + 0.8 * (0.8f64 / m[1]).ln());
        assert!((js_divergence(&a, &b).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn ece_trivial_cases() {
        // perfectly confident and correct
        let p = preds_from_probs(
            vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0, 0, 1],
        );
        let e = ece_equal_mass(&p, &EceConfig { n_bins: 3 }).unwrap();
        assert!(e.abs() < 1e-9);

        // singleton bins: ECE = mean |1[correct] - confidence|
        let q = preds_from_probs(
            vec![vec![0.7, 0.3], vec![0.4, 0.6], vec![0.9, 0.1]],
            vec![0, 0, 1],
        );
        let e = ece_equal_mass(&q, &EceConfig { n_bins: 3 }).unwrap();
        let expected = ((1.0f64 - 0.7).abs() + (0.0f64 - 0.6).abs() + (0.0f64 - 0.9).abs()) / 3.0;
        assert!((e - expected).abs() < 1e-9);
    }

    #[test]
    fn ece_rejects_more_bins_than_samples() {
        let p = preds_from_probs(vec![vec![0.6, 0.4]], vec![0]);
        assert!(ece_equal_mass(&p, &EceConfig { n_bins: 2 }).is_err());
    }

    #[test]
    fn accuracy_nll_examples() {
        let p = preds_from_probs(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1]);
        let (acc, nll) = accuracy_nll(&p);
        assert_eq!(acc, 1.0);
        assert!(nll.abs() < 1e-9);

        let q = preds_from_probs(vec![vec![0.1, 0.9], vec![0.8, 0.2]], vec![0, 1]);
        let (acc, _) = accuracy_nll(&q);
        assert_eq!(acc, 0.0);
    }

    #[test]
    fn temperature_doubles_with_logit_scale() {
        // over-confident logits; optimal tau > 1, and doubling all logits
        // doubles the fitted temperature
        let logits = Tensor2::<f64>::from_rows(&[
            vec![4.0, 0.0, 0.0],
            vec![0.0, 4.0, 0.0],
            vec![3.0, 1.0, 0.0],
            vec![0.0, 1.0, 3.5],
            vec![2.0, 2.5, 0.0],
            vec![1.0, 0.0, 2.0],
        ])
        .unwrap();
        let labels = vec![0, 1, 1, 2, 0, 0];
        let holdout = PredictionSet::from_logits(logits.clone(), labels.clone(), "h").unwrap();
        let eval = holdout.clone();
        let cfg = EceConfig { n_bins: 2 };
        let (tau, _) = temperature_scale(&holdout, &eval, &cfg).unwrap();

        let mut doubled = logits.clone();
        for v in doubled.data_mut() {
            *v *= 2.0;
        }
        let holdout2 = PredictionSet::from_logits(doubled, labels, "h2").unwrap();
        let (tau2, _) = temperature_scale(&holdout2, &eval, &cfg).unwrap();
        assert!((tau2 / tau - 2.0).abs() < 5e-3, "tau={tau} tau2={tau2}");
    }

    #[test]
    fn flat_objective_ties_toward_one() {
        let logits = Tensor2::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let holdout = PredictionSet::from_logits(logits, vec![0, 1, 0], "h").unwrap();
        let eval = holdout.clone();
        let (tau, _) = temperature_scale(&holdout, &eval, &EceConfig { n_bins: 1 }).unwrap();
        assert_eq!(tau, 1.0);
    }

    #[test]
    fn scaling_preserves_top1() {
        let logits = Tensor2::from_rows(&[vec![2.0, 1.0, -1.0], vec![-3.0, 0.5, 0.4]]).unwrap();
        let p = PredictionSet::from_logits(logits, vec![0, 1], "p").unwrap();
        let scaled = apply_temperature(&p, 7.3).unwrap();
        for i in 0..2 {
            assert_eq!(p.top_class(i), scaled.top_class(i));
        }
    }

    #[test]
    fn csv_dump_round_trips() {
        let logits = Tensor2::from_rows(&[vec![0.125, -3.5], vec![1e-17, 2.0]]).unwrap();
        let p = PredictionSet::from_logits(logits, vec![1, 0], "r").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.csv");
        p.dump_csv(&path).unwrap();
        let q = PredictionSet::<f64>::load_csv(&path, "r").unwrap();
        assert_eq!(p.labels, q.labels);
        assert_eq!(p.logits.unwrap().data(), q.logits.unwrap().data());
    }
}
