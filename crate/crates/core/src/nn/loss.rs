//! Softmax cross-entropy with a numerically stable softmax.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor2;

/// Row-wise softmax with row-max subtraction.
pub fn softmax_rows<F: Real>(logits: &Tensor2<F>) -> Tensor2<F> {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Mean negative log-likelihood and its gradient with respect to the logits,
/// `(softmax - one_hot) / batch_size`.
pub fn softmax_cross_entropy<F: Real>(
    logits: &Tensor2<F>,
    labels: &[usize],
) -> Result<(F, Tensor2<F>)> {
    let n = logits.rows();
    let c = logits.cols();
    if labels.len() != n {
        return Err(Error::input(format!(
            "got {} labels for {} logit rows",
            labels.len(),
            n
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::input(format!("label {} out of range for {} classes", bad, c)));
    }
    let n_f = F::from_usize_lossy(n.max(1));
    let mut probs = softmax_rows(logits);
    let mut loss = F::zero();
    for (i, &label) in labels.iter().enumerate() {
        // log prob of the true class, computed stably from the logits
        let row = logits.row(i);
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let log_sum = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
        loss = loss - (row[label] - max - log_sum);

        let pr = probs.row_mut(i);
        pr[label] = pr[label] - F::one();
        for v in pr.iter_mut() {
            *v = *v / n_f;
        }
    }
    Ok((loss / n_f, probs))
}
