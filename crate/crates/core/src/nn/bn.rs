//! Running batch-normalization statistics, kept apart from the weights.
//!
//! Averaged models treat BN statistics differently from trainable parameters,
//! so they live in their own structure rather than inside the parameter
//! vector.

use serde::{Deserialize, Serialize};

use crate::scalar::{real, Real};

pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;
pub const DEFAULT_BN_EPSILON: f64 = 1e-5;

/// Running mean/variance of one BN layer's pre-normalization activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnLayerStats<F> {
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
}

impl<F: Real> BnLayerStats<F> {
    /// Fresh stats: zero mean, unit variance.
    pub fn fresh(width: usize) -> Self {
        Self {
            running_mean: vec![F::zero(); width],
            running_var: vec![F::one(); width],
        }
    }

    pub fn width(&self) -> usize {
        self.running_mean.len()
    }
}

/// All BN state of a model: one entry per BN-bearing hidden layer, in layer
/// order, plus the shared momentum and epsilon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnStats<F> {
    pub layers: Vec<BnLayerStats<F>>,
    pub momentum: F,
    pub epsilon: F,
}

impl<F: Real> BnStats<F> {
    pub fn fresh(widths: &[usize]) -> Self {
        Self {
            layers: widths.iter().map(|&w| BnLayerStats::fresh(w)).collect(),
            momentum: real(DEFAULT_BN_MOMENTUM),
            epsilon: real(DEFAULT_BN_EPSILON),
        }
    }

    pub fn empty() -> Self {
        Self::fresh(&[])
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// `running <- (1 - m) * running + m * batch` for one layer.
    pub fn update_running(&mut self, layer: usize, batch_mean: &[F], batch_var: &[F]) {
        let m = self.momentum;
        let stats = &mut self.layers[layer];
        for (r, &b) in stats.running_mean.iter_mut().zip(batch_mean) {
            *r = (F::one() - m) * *r + m * b;
        }
        for (r, &b) in stats.running_var.iter_mut().zip(batch_var) {
            *r = (F::one() - m) * *r + m * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.running_mean.iter().all(|v| v.is_finite())
                && l.running_var.iter().all(|v| v.is_finite() && *v >= F::zero())
        })
    }
}

/// Streaming exact moments of BN-layer activations over a dataset.
///
/// Batches are absorbed with the parallel-variance combination rule, so the
/// final mean/variance equal a single pass over the concatenated data up to
/// rounding.
#[derive(Debug, Clone)]
pub struct BnMoments<F> {
    counts: Vec<usize>,
    means: Vec<Vec<F>>,
    m2: Vec<Vec<F>>,
}

impl<F: Real> BnMoments<F> {
    pub fn new(widths: &[usize]) -> Self {
        Self {
            counts: vec![0; widths.len()],
            means: widths.iter().map(|&w| vec![F::zero(); w]).collect(),
            m2: widths.iter().map(|&w| vec![F::zero(); w]).collect(),
        }
    }

    /// Merges one batch's population mean/variance over `n` rows.
    pub fn absorb_batch(&mut self, layer: usize, n: usize, batch_mean: &[F], batch_var: &[F]) {
        let na = self.counts[layer];
        let nb = n;
        let na_f = F::from_usize_lossy(na);
        let nb_f = F::from_usize_lossy(nb);
        let total_f = F::from_usize_lossy(na + nb);
        let mean = &mut self.means[layer];
        let m2 = &mut self.m2[layer];
        for j in 0..mean.len() {
            let delta = batch_mean[j] - mean[j];
            mean[j] = mean[j] + delta * nb_f / total_f;
            m2[j] = m2[j] + batch_var[j] * nb_f + delta * delta * na_f * nb_f / total_f;
        }
        self.counts[layer] = na + nb;
    }

    pub fn total_count(&self, layer: usize) -> usize {
        self.counts[layer]
    }

    /// Finalizes into running stats (population variance), keeping the given
    /// momentum/epsilon.
    pub fn into_stats(self, momentum: F, epsilon: F) -> BnStats<F> {
        let layers = self
            .counts
            .iter()
            .zip(self.means)
            .zip(self.m2)
            .map(|((&n, mean), m2)| {
                let n_f = F::from_usize_lossy(n.max(1));
                BnLayerStats {
                    running_mean: mean,
                    running_var: m2.into_iter().map(|v| v / n_f).collect(),
                }
            })
            .collect();
        BnStats {
            layers,
            momentum,
            epsilon,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_match_single_pass() {
        // two batches vs. one pass over the concatenation
        let a = [1.0, 2.0, 3.0];
        let b = [10.0, 20.0];
        let all: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let var = |xs: &[f64]| {
            let m = mean(xs);
            xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
        };
        let mut mom = BnMoments::<f64>::new(&[1]);
        mom.absorb_batch(0, 3, &[mean(&a)], &[var(&a)]);
        mom.absorb_batch(0, 2, &[mean(&b)], &[var(&b)]);
        let stats = mom.into_stats(0.1, 1e-5);
        assert!((stats.layers[0].running_mean[0] - mean(&all)).abs() < 1e-12);
        assert!((stats.layers[0].running_var[0] - var(&all)).abs() < 1e-12);
    }

    #[test]
    fn running_update_matches_formula() {
        let mut bn = BnStats::<f64>::fresh(&[2]);
        bn.update_running(0, &[1.0, 2.0], &[4.0, 0.0]);
        assert!((bn.layers[0].running_mean[0] - 0.1).abs() < 1e-15);
        assert!((bn.layers[0].running_var[0] - (0.9 + 0.4)).abs() < 1e-15);
        assert!((bn.layers[0].running_var[1] - 0.9).abs() < 1e-15);
    }
}
