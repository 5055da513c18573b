//! Finite-difference gradient verification.

use crate::error::Result;
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::{Mode, Model};
use crate::scalar::Real;
use crate::tensor::Tensor2;

/// Compares the analytic gradient of the cross-entropy loss against central
/// finite differences of size `step`, returning the worst relative error over
/// all parameters. A zero-parameter model returns 0 by convention.
pub fn grad_check<F: Real>(
    model: &Model<F>,
    batch: &Tensor2<F>,
    labels: &[usize],
    step: F,
) -> Result<F> {
    if model.params.is_empty() {
        return Ok(F::zero());
    }

    let analytic = {
        let mut m = model.clone();
        let (logits, cache) = m.forward(batch, Mode::Train)?;
        let (_, grad_logits) = softmax_cross_entropy(&logits, labels)?;
        m.backward(&cache, &grad_logits)?
    };

    let loss_at = |m: &Model<F>| -> Result<F> {
        let mut m = m.clone();
        let (logits, _) = m.forward(batch, Mode::Train)?;
        let (loss, _) = softmax_cross_entropy(&logits, labels)?;
        Ok(loss)
    };

    let mut worst = F::zero();
    let two = F::from_f64_lossy(2.0);
    for i in 0..model.params.len() {
        let orig = model.params.values()[i];
        let mut m = model.clone();
        m.params.values_mut()[i] = orig + step;
        let plus = loss_at(&m)?;
        m.params.values_mut()[i] = orig - step;
        let minus = loss_at(&m)?;
        let numeric = (plus - minus) / (two * step);
        let a = analytic.values()[i];
        let denom = (a.abs() + numeric.abs()).max(F::one());
        let rel = (a - numeric).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
