//! Synthetic classification datasets, symmetric label noise, and stratified
//! splits. Desk-scale stand-ins for image benchmarks: everything is
//! deterministic given its seed.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::SeedState;
use crate::tensor::Tensor2;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    GaussianBlobs,
    ConcentricRings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub class_separation: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Tensor2<Scalar>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Generates a balanced dataset (class counts differ by at most one) with
/// per-dimension standardized features.
pub fn synthesize(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.n_classes == 0 || spec.n_features == 0 {
        return Err(Error::input("need at least one class and one feature"));
    }
    if spec.n_samples < spec.n_classes * 10 {
        return Err(Error::input(format!(
            "need at least {} samples for {} classes",
            spec.n_classes * 10,
            spec.n_classes
        )));
    }
    if spec.class_separation <= 0.0 {
        return Err(Error::input("class separation must be positive"));
    }
    let mut rng = SeedState::new(spec.seed).rng("dataset");
    let n = spec.n_samples;
    let d = spec.n_features;
    let k = spec.n_classes;

    // interleaved class assignment keeps counts within one of each other
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let mut data = vec![0.0; n * d];
    match spec.kind {
        DatasetKind::GaussianBlobs => {
            let centers: Vec<Vec<f64>> = (0..k)
                .map(|_| {
                    (0..d)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            z * spec.class_separation
                        })
                        .collect()
                })
                .collect();
            for (i, &label) in labels.iter().enumerate() {
                for j in 0..d {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data[i * d + j] = centers[label][j] + z;
                }
            }
        }
        DatasetKind::ConcentricRings => {
            for (i, &label) in labels.iter().enumerate() {
                let radius_noise: f64 = StandardNormal.sample(&mut rng);
                let radius = (label as f64 + 1.0) * spec.class_separation + 0.25 * radius_noise;
                let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                data[i * d] = radius * angle.cos();
                if d > 1 {
                    data[i * d + 1] = radius * angle.sin();
                }
                for j in 2..d {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data[i * d + j] = z;
                }
            }
        }
    }

    let mut features = Tensor2::new(n, d, data)?;
    standardize_columns(&mut features);
    Ok(Dataset { features, labels })
}

fn standardize_columns(x: &mut Tensor2<Scalar>) {
    let mean = x.col_mean();
    let var = x.col_var(&mean);
    let n_rows = x.rows();
    let cols = x.cols();
    for j in 0..cols {
        let std = var[j].sqrt().max(1e-12);
        for i in 0..n_rows {
            let v = (x.get(i, j) - mean[j]) / std;
            x.set(i, j, v);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Fraction of train labels to flip.
    pub rate: f64,
    pub seed: u64,
}

/// Flips exactly `round(rate * N)` labels, each to a uniformly chosen
/// different class. Returns the noisy labels and the flipped mask.
pub fn inject_noise(
    labels: &[usize],
    n_classes: usize,
    spec: &NoiseSpec,
) -> Result<(Vec<usize>, Vec<bool>)> {
    if !(0.0..=1.0).contains(&spec.rate) {
        return Err(Error::input("noise rate must be in [0, 1]"));
    }
    let n = labels.len();
    let n_flip = (spec.rate * n as f64).round() as usize;
    if n_classes < 2 && n_flip > 0 {
        return Err(Error::input("cannot flip labels with a single class"));
    }
    let mut rng = SeedState::new(spec.seed).rng("noise");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut noisy = labels.to_vec();
    let mut mask = vec![false; n];
    for &i in order.iter().take(n_flip) {
        let mut new = rng.gen_range(0..n_classes - 1);
        if new >= labels[i] {
            new += 1;
        }
        noisy[i] = new;
        mask[i] = true;
    }
    Ok((noisy, mask))
}

/// Stratified split into (train, holdout) index sets with `|train| =
/// round(fraction * N)` and per-class proportions within one sample of the
/// requested fraction (largest-remainder apportionment).
pub fn stratified_split(
    labels: &[usize],
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let n = labels.len();
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let target_total = (fraction * n as f64).round() as usize;

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for idx in &mut by_class {
        idx.shuffle(rng);
    }

    // per-class quota: floor, then hand out the remainder by largest
    // fractional part
    let mut quotas: Vec<usize> = Vec::with_capacity(n_classes);
    let mut fracs: Vec<(usize, f64)> = Vec::with_capacity(n_classes);
    let mut assigned = 0;
    for (c, idx) in by_class.iter().enumerate() {
        let exact = fraction * idx.len() as f64;
        let q = exact.floor() as usize;
        quotas.push(q);
        assigned += q;
        fracs.push((c, exact - q as f64));
    }
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut leftover = target_total.saturating_sub(assigned);
    for (c, _) in fracs {
        if leftover == 0 {
            break;
        }
        if quotas[c] < by_class[c].len() {
            quotas[c] += 1;
            leftover -= 1;
        }
    }

    let mut train = Vec::with_capacity(target_total);
    let mut holdout = Vec::with_capacity(n - target_total);
    for (c, idx) in by_class.iter().enumerate() {
        train.extend_from_slice(&idx[..quotas[c]]);
        holdout.extend_from_slice(&idx[quotas[c]..]);
    }
    train.sort_unstable();
    holdout.sort_unstable();
    (train, holdout)
}

/// The 80/20 validation split used for model selection.
pub fn split_80_20(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if dataset.len() < 10 {
        return Err(Error::input("dataset too small to split"));
    }
    let mut rng = SeedState::new(seed).rng("split");
    let (train_idx, val_idx) = stratified_split(&dataset.labels, fraction, &mut rng);
    Ok((dataset.select(&train_idx), dataset.select(&val_idx)))
}
