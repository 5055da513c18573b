//! Linear evaluation: train a fresh linear classification head on top of a
//! frozen backbone and report target-set accuracy.

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::PredictionSet;
use crate::nn::{softmax_cross_entropy, MlpSpec, Mode, Model};
use crate::optim::{sgd_step, SgdState};
use crate::seeds::SeedState;
use crate::Scalar;

const HEAD_EPOCHS: usize = 50;
const HEAD_LR: f64 = 0.01;
const HEAD_MOMENTUM: f64 = 0.9;

/// Trains a linear head for 50 epochs (Nesterov momentum 0.9, lr 0.01,
/// constant schedule, no weight decay, no warmup, no EMA) on features from
/// the frozen backbone, then returns target test accuracy.
///
/// The backbone and its BN statistics are never touched: features are
/// extracted once in eval mode, so backbone gradients are identically zero.
pub fn linear_eval(
    backbone: &Model<Scalar>,
    target_train: &Dataset,
    target_test: &Dataset,
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    let feat_width = backbone.spec.layer_widths[backbone.spec.layer_widths.len() - 2];
    if target_train.features.cols() != backbone.spec.input_width() {
        return Err(Error::input(format!(
            "target feature width {} does not match backbone input width {}",
            target_train.features.cols(),
            backbone.spec.input_width()
        )));
    }
    let n_classes = target_train
        .labels
        .iter()
        .chain(&target_test.labels)
        .max()
        .map_or(0, |&m| m + 1);

    let train_feats = backbone.forward_eval_features(&target_train.features)?;
    let test_feats = backbone.forward_eval_features(&target_test.features)?;

    let head_spec = MlpSpec::plain(vec![feat_width, n_classes])?;
    let seeds = SeedState::new(seed);
    let mut rng = seeds.rng("head_init");
    let mut head = Model::init(head_spec, &mut rng);
    let mut sgd = SgdState::new(&head.params, HEAD_MOMENTUM, 0.0, true);

    let mut shuffle_rng = seeds.rng("head_shuffle");
    let mut order: Vec<usize> = (0..target_train.len()).collect();
    for _ in 0..HEAD_EPOCHS {
        order.shuffle(&mut shuffle_rng);
        let mut start = 0;
        while start < order.len() {
            let end = (start + batch_size).min(order.len());
            let idx = &order[start..end];
            let batch = train_feats.select_rows(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| target_train.labels[i]).collect();
            let (logits, cache) = head.forward(&batch, Mode::Train)?;
            let (_, grad_logits) = softmax_cross_entropy(&logits, &labels)?;
            let grad = head.backward(&cache, &grad_logits)?;
            sgd_step(&mut head.params, &grad, &mut sgd, HEAD_LR)?;
            start = end;
        }
    }

    let logits = head.forward_eval(&test_feats)?;
    let preds = PredictionSet::from_logits(logits, target_test.labels.clone(), "linear_eval")?;
    Ok(crate::metrics::accuracy_nll(&preds).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize, DatasetKind, DatasetSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn head_learns_on_separable_data() {
        let ds = synthesize(&DatasetSpec {
            kind: DatasetKind::GaussianBlobs,
            n_samples: 240,
            n_features: 4,
            n_classes: 2,
            class_separation: 5.0,
            seed: 3,
        })
        .unwrap();
        let train_idx: Vec<usize> = (0..200).collect();
        let test_idx: Vec<usize> = (200..240).collect();
        let train = ds.select(&train_idx);
        let test = ds.select(&test_idx);

        // random frozen backbone with a wide hidden layer
        let spec = crate::nn::MlpSpec::plain(vec![4, 32, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let backbone = Model::init(spec, &mut rng);
        let before = backbone.params.values().to_vec();
        let acc = linear_eval(&backbone, &train, &test, 32, 1).unwrap();
        assert_eq!(backbone.params.values(), before.as_slice());
        assert!(acc > 0.9, "linear head accuracy {acc}");
    }

    #[test]
    fn width_mismatch_rejected() {
        let ds = synthesize(&DatasetSpec {
            kind: DatasetKind::GaussianBlobs,
            n_samples: 100,
            n_features: 3,
            n_classes: 2,
            class_separation: 2.0,
            seed: 3,
        })
        .unwrap();
        let spec = crate::nn::MlpSpec::plain(vec![4, 8, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let backbone = Model::init(spec, &mut rng);
        assert!(linear_eval(&backbone, &ds, &ds, 32, 1).is_err());
    }
}
