//! Minimal feed-forward network engine: MLP with optional per-hidden-layer
//! batch normalization, rectifier activations, softmax cross-entropy and
//! exact backpropagation.
//!
//! The model state is split in two on purpose: trainable parameters live in a
//! flat [`ParamVector`] (what gets averaged), BN running statistics live in
//! [`BnStats`] (averaged or recomputed under their own rules).

pub mod bn;
pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod params;

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use bn::{BnLayerStats, BnMoments, BnStats};
pub use checkpoint::{AveragingMeta, Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use gradcheck::grad_check;
pub use loss::{softmax_cross_entropy, softmax_rows};
pub use params::{ParamLayout, ParamName, ParamVector, Segment};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor2;

/// Architecture of an MLP: full width list `[input, hidden.., n_classes]`
/// plus a BN on/off flag per hidden layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub batchnorm: Vec<bool>,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, batchnorm: Vec<bool>) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::input("need at least input and output widths"));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::input("layer widths must be positive"));
        }
        let hidden = layer_widths.len() - 2;
        if batchnorm.len() != hidden {
            return Err(Error::input(format!(
                "expected {} batchnorm flags, got {}",
                hidden,
                batchnorm.len()
            )));
        }
        Ok(Self {
            layer_widths,
            batchnorm,
        })
    }

    /// MLP without batch normalization anywhere.
    pub fn plain(layer_widths: Vec<usize>) -> Result<Self> {
        let hidden = layer_widths.len().saturating_sub(2);
        Self::new(layer_widths, vec![false; hidden])
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    /// Number of affine layers.
    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn has_batchnorm(&self) -> bool {
        self.batchnorm.iter().any(|&b| b)
    }

    /// Index into the BN stats list for a given affine layer, if it has BN.
    pub fn bn_index(&self, layer: usize) -> Option<usize> {
        if layer >= self.batchnorm.len() || !self.batchnorm[layer] {
            return None;
        }
        Some(self.batchnorm[..layer].iter().filter(|&&b| b).count())
    }

    /// Widths of the BN-bearing hidden layers, in order.
    pub fn bn_widths(&self) -> Vec<usize> {
        self.batchnorm
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(l, _)| self.layer_widths[l + 1])
            .collect()
    }

    /// Parameter layout shared by every model built from this spec.
    pub fn layout(&self) -> Arc<ParamLayout> {
        let mut sizes = Vec::new();
        for l in 0..self.n_layers() {
            let fan_in = self.layer_widths[l];
            let fan_out = self.layer_widths[l + 1];
            sizes.push((l, ParamName::Weight, fan_in * fan_out));
            sizes.push((l, ParamName::Bias, fan_out));
            if self.bn_index(l).is_some() {
                sizes.push((l, ParamName::Gamma, fan_out));
                sizes.push((l, ParamName::Beta, fan_out));
            }
        }
        Arc::new(ParamLayout::new(sizes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

struct BnCache<F> {
    xhat: Tensor2<F>,
    inv_std: Vec<F>,
}

struct LayerCache<F> {
    /// Input to the affine part of this layer.
    input: Tensor2<F>,
    bn: Option<BnCache<F>>,
    /// Post-rectifier output; `None` for the final layer.
    activated: Option<Tensor2<F>>,
}

/// Intermediates recorded by a train-mode forward, consumed by `backward`.
pub struct ForwardCache<F> {
    mode: Mode,
    layers: Vec<LayerCache<F>>,
}

impl<F> ForwardCache<F> {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

/// How a forward pass should treat BN statistics.
enum BnUse<'a, F> {
    /// Normalize by batch stats, push them into the running stats.
    TrainUpdate(&'a mut BnStats<F>),
    /// Normalize by the given running stats, no mutation.
    EvalUse(&'a BnStats<F>),
    /// Normalize by batch stats, accumulate exact dataset moments.
    Collect(&'a BnStats<F>, &'a mut BnMoments<F>),
}

/// A full model: architecture, trainable parameters, BN state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model<F> {
    pub spec: MlpSpec,
    pub params: ParamVector<F>,
    pub bn: BnStats<F>,
}

impl<F: Real> Model<F> {
    /// He-style fan-in scaled random initialization; biases and BN shifts at
    /// zero, BN scales at one.
    pub fn init<R: Rng>(spec: MlpSpec, rng: &mut R) -> Self {
        let layout = spec.layout();
        let mut params = ParamVector::zeros(layout);
        for l in 0..spec.n_layers() {
            let fan_in = spec.layer_widths[l];
            let std = (2.0 / fan_in as f64).sqrt();
            let w = params.segment_mut(l, ParamName::Weight).unwrap();
            for v in w.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v = F::from_f64_lossy(z * std);
            }
            if let Some(g) = params.segment_mut(l, ParamName::Gamma) {
                g.fill(F::one());
            }
        }
        let bn = BnStats::fresh(&spec.bn_widths());
        Self { spec, params, bn }
    }

    pub fn from_parts(spec: MlpSpec, params: ParamVector<F>, bn: BnStats<F>) -> Self {
        Self { spec, params, bn }
    }

    pub fn forward(&mut self, batch: &Tensor2<F>, mode: Mode) -> Result<(Tensor2<F>, ForwardCache<F>)> {
        match mode {
            Mode::Train => {
                let (logits, layers) = forward_impl(
                    &self.spec,
                    &self.params,
                    BnUse::TrainUpdate(&mut self.bn),
                    batch,
                    true,
                )?;
                Ok((
                    logits,
                    ForwardCache {
                        mode: Mode::Train,
                        layers,
                    },
                ))
            }
            Mode::Eval => {
                let logits = self.forward_eval(batch)?;
                Ok((
                    logits,
                    ForwardCache {
                        mode: Mode::Eval,
                        layers: Vec::new(),
                    },
                ))
            }
        }
    }

    /// Eval-mode forward: pure function of (params, bn, batch), safe on a
    /// shared reference.
    pub fn forward_eval(&self, batch: &Tensor2<F>) -> Result<Tensor2<F>> {
        let (logits, _) = forward_impl(
            &self.spec,
            &self.params,
            BnUse::EvalUse(&self.bn),
            batch,
            false,
        )?;
        Ok(logits)
    }

    /// Eval-mode forward through everything but the final affine layer; the
    /// frozen-backbone feature extractor of linear evaluation.
    pub fn forward_eval_features(&self, batch: &Tensor2<F>) -> Result<Tensor2<F>> {
        let (features, _) = forward_limited(
            &self.spec,
            &self.params,
            BnUse::EvalUse(&self.bn),
            batch,
            false,
            self.spec.n_layers() - 1,
        )?;
        Ok(features)
    }

    /// Train-mode forward that accumulates exact activation moments instead
    /// of updating running stats; used by BN recomputation.
    pub fn forward_collect(&self, batch: &Tensor2<F>, moments: &mut BnMoments<F>) -> Result<()> {
        forward_impl(
            &self.spec,
            &self.params,
            BnUse::Collect(&self.bn, moments),
            batch,
            false,
        )?;
        Ok(())
    }

    /// Backpropagates `grad_logits` through a train-mode cache, returning the
    /// full gradient in this model's parameter layout.
    pub fn backward(&self, cache: &ForwardCache<F>, grad_logits: &Tensor2<F>) -> Result<ParamVector<F>> {
        if cache.mode != Mode::Train {
            return Err(Error::contract("backward requires a train-mode cache"));
        }
        let spec = &self.spec;
        let mut grad = ParamVector::zeros(Arc::clone(self.params.layout()));
        let mut upstream = grad_logits.clone();

        for l in (0..spec.n_layers()).rev() {
            let lc = &cache.layers[l];
            let n = lc.input.rows();
            let out_w = spec.layer_widths[l + 1];

            // Rectifier: zero gradient where the output was clamped.
            if let Some(activated) = &lc.activated {
                for i in 0..n {
                    let a = activated.row(i);
                    let u = upstream.row_mut(i);
                    for (g, &av) in u.iter_mut().zip(a) {
                        if av <= F::zero() {
                            *g = F::zero();
                        }
                    }
                }
            }

            // BN backward (batch statistics).
            if let Some(bnc) = &lc.bn {
                let gamma = self.params.segment(l, ParamName::Gamma).unwrap().to_vec();
                let n_f = F::from_usize_lossy(n);
                let mut dgamma = vec![F::zero(); out_w];
                let mut dbeta = vec![F::zero(); out_w];
                let mut sum_dxhat = vec![F::zero(); out_w];
                let mut sum_dxhat_xhat = vec![F::zero(); out_w];
                let mut dxhat = Tensor2::zeros(n, out_w);
                for i in 0..n {
                    let dy = upstream.row(i);
                    let xh = bnc.xhat.row(i);
                    for j in 0..out_w {
                        let d = dy[j] * gamma[j];
                        dxhat.set(i, j, d);
                        dgamma[j] = dgamma[j] + dy[j] * xh[j];
                        dbeta[j] = dbeta[j] + dy[j];
                        sum_dxhat[j] = sum_dxhat[j] + d;
                        sum_dxhat_xhat[j] = sum_dxhat_xhat[j] + d * xh[j];
                    }
                }
                let mut dz = Tensor2::zeros(n, out_w);
                for i in 0..n {
                    let xh = bnc.xhat.row(i);
                    for j in 0..out_w {
                        let v = bnc.inv_std[j] / n_f
                            * (n_f * dxhat.get(i, j) - sum_dxhat[j] - xh[j] * sum_dxhat_xhat[j]);
                        dz.set(i, j, v);
                    }
                }
                grad.segment_mut(l, ParamName::Gamma)
                    .unwrap()
                    .copy_from_slice(&dgamma);
                grad.segment_mut(l, ParamName::Beta)
                    .unwrap()
                    .copy_from_slice(&dbeta);
                upstream = dz;
            }

            // Affine backward: dW = dz^T x, db = column sums, dx = dz W.
            let in_w = spec.layer_widths[l];
            {
                let dw = grad.segment_mut(l, ParamName::Weight).unwrap();
                for i in 0..n {
                    let dz = upstream.row(i);
                    let x = lc.input.row(i);
                    for j in 0..out_w {
                        let row = &mut dw[j * in_w..(j + 1) * in_w];
                        let dzj = dz[j];
                        for (gv, &xv) in row.iter_mut().zip(x) {
                            *gv = *gv + dzj * xv;
                        }
                    }
                }
            }
            {
                let db = grad.segment_mut(l, ParamName::Bias).unwrap();
                for i in 0..n {
                    for (b, &d) in db.iter_mut().zip(upstream.row(i)) {
                        *b = *b + d;
                    }
                }
            }
            if l > 0 {
                let w_vals = self.params.segment(l, ParamName::Weight).unwrap();
                let w = Tensor2::new(out_w, in_w, w_vals.to_vec())?;
                upstream = upstream.matmul(&w);
            }
        }
        Ok(grad)
    }
}

fn forward_impl<F: Real>(
    spec: &MlpSpec,
    params: &ParamVector<F>,
    bn_use: BnUse<'_, F>,
    batch: &Tensor2<F>,
    with_cache: bool,
) -> Result<(Tensor2<F>, Vec<LayerCache<F>>)> {
    forward_limited(spec, params, bn_use, batch, with_cache, spec.n_layers())
}

fn forward_limited<F: Real>(
    spec: &MlpSpec,
    params: &ParamVector<F>,
    mut bn_use: BnUse<'_, F>,
    batch: &Tensor2<F>,
    with_cache: bool,
    layer_limit: usize,
) -> Result<(Tensor2<F>, Vec<LayerCache<F>>)> {
    if batch.cols() != spec.input_width() {
        return Err(Error::input(format!(
            "batch width {} does not match input width {}",
            batch.cols(),
            spec.input_width()
        )));
    }
    let batch_norm_active = matches!(bn_use, BnUse::TrainUpdate(_) | BnUse::Collect(..));
    if batch_norm_active && spec.has_batchnorm() && batch.rows() < 2 {
        return Err(Error::input(
            "batch normalization in train mode needs at least 2 samples",
        ));
    }

    let mut caches = Vec::new();
    let mut x = batch.clone();
    for l in 0..layer_limit {
        let in_w = spec.layer_widths[l];
        let out_w = spec.layer_widths[l + 1];
        let w_vals = params.segment(l, ParamName::Weight).unwrap();
        let w = Tensor2::new(out_w, in_w, w_vals.to_vec())?;
        let b = params.segment(l, ParamName::Bias).unwrap();

        let mut z = x.matmul_transposed(&w);
        for i in 0..z.rows() {
            for (zv, &bv) in z.row_mut(i).iter_mut().zip(b) {
                *zv = *zv + bv;
            }
        }

        let mut bn_cache = None;
        if let Some(bn_idx) = spec.bn_index(l) {
            let gamma = params.segment(l, ParamName::Gamma).unwrap();
            let beta = params.segment(l, ParamName::Beta).unwrap();
            let (mean, var, eps) = match &mut bn_use {
                BnUse::TrainUpdate(stats) => {
                    let mean = z.col_mean();
                    let var = z.col_var(&mean);
                    stats.update_running(bn_idx, &mean, &var);
                    (mean, var, stats.epsilon)
                }
                BnUse::EvalUse(stats) => (
                    stats.layers[bn_idx].running_mean.clone(),
                    stats.layers[bn_idx].running_var.clone(),
                    stats.epsilon,
                ),
                BnUse::Collect(stats, moments) => {
                    let mean = z.col_mean();
                    let var = z.col_var(&mean);
                    moments.absorb_batch(bn_idx, z.rows(), &mean, &var);
                    (mean, var, stats.epsilon)
                }
            };
            let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
            let mut xhat = Tensor2::zeros(z.rows(), out_w);
            for i in 0..z.rows() {
                let zr = z.row(i);
                let xr = xhat.row_mut(i);
                for j in 0..out_w {
                    xr[j] = (zr[j] - mean[j]) * inv_std[j];
                }
            }
            let mut y = Tensor2::zeros(z.rows(), out_w);
            for i in 0..z.rows() {
                let xr = xhat.row(i);
                let yr = y.row_mut(i);
                for j in 0..out_w {
                    yr[j] = gamma[j] * xr[j] + beta[j];
                }
            }
            if with_cache {
                bn_cache = Some(BnCache { xhat, inv_std });
            }
            z = y;
        }

        let is_hidden = l + 1 < spec.layer_widths.len() - 1;
        let activated = if is_hidden {
            for v in z.data_mut() {
                if *v < F::zero() {
                    *v = F::zero();
                }
            }
            Some(z.clone())
        } else {
            None
        };

        if with_cache {
            caches.push(LayerCache {
                input: x.clone(),
                bn: bn_cache,
                activated: activated.clone(),
            });
        }
        x = z;
    }
    Ok((x, caches))
}
