//! Minibatch training with per-epoch test evaluation and best-checkpoint
//! selection.

use rand::seq::SliceRandom;

use super::adam::{adam_step, AdamState};
use super::loss::{sigmoid, weighted_bce};
use super::model::{Mode, Model, Params};
use super::tensor::{Act, Scalar};
use super::{ModelConfig, ModelError};
use crate::dsp::TENSOR_DIMS;
use crate::experiment::LabeledDataset;
use crate::{metrics, seed};

/// Scores are kept inside `(SCORE_CLAMP, 1 − SCORE_CLAMP)`.
pub const SCORE_CLAMP: f64 = 1e-7;

/// Borrowed inputs of shape `dims` with binary labels.
#[derive(Debug, Clone)]
pub struct Samples<'a> {
    pub dims: [usize; 3],
    pub items: Vec<&'a [f32]>,
    pub labels: Vec<u8>,
}

impl<'a> Samples<'a> {
    pub fn from_dataset(ds: &'a LabeledDataset) -> Self {
        Samples {
            dims: TENSOR_DIMS,
            items: ds.items.iter().map(|t| &t.data[..]).collect(),
            labels: ds.labels(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn gather<T: Scalar>(&self, idx: &[usize]) -> Result<Act<T>, ModelError> {
        let [c, h, w] = self.dims;
        let mut data = Vec::with_capacity(idx.len() * c * h * w);
        for &i in idx {
            let item = self.items[i];
            if item.len() != c * h * w {
                return Err(ModelError::Shape {
                    expected: format!("{c}x{h}x{w} values"),
                    found: format!("{} values", item.len()),
                });
            }
            data.extend(item.iter().map(|&v| T::of(f64::from(v))));
        }
        Ok(Act::from_vec(idx.len(), c, h, w, data).expect("sized above"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when the test set lacks a class.
    pub test_ba: f64,
    pub test_auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were kept: the first with the highest test BA,
    /// or the last epoch when test BA was never defined.
    pub best_epoch: usize,
}

/// Sigmoid scores of an eval-mode forward pass.
pub fn predict_samples<T: Scalar>(model: &Model<T>, samples: &Samples) -> Result<Vec<f64>, ModelError> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut scores = Vec::with_capacity(samples.len());
    for chunk in idx.chunks(model.config.batch_size.max(1)) {
        let x = samples.gather::<T>(chunk)?;
        for z in model.forward(&x, Mode::Eval)? {
            scores.push(sigmoid(z.f64()).clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP));
        }
    }
    Ok(scores)
}

pub fn predict(model: &Model<f32>, dataset: &LabeledDataset) -> Result<Vec<f64>, ModelError> {
    predict_samples(model, &Samples::from_dataset(dataset))
}

/// Trains an f32 model; `on_epoch` sees each epoch's statistics as they
/// are produced.
pub fn train_samples(
    train: &Samples,
    test: &Samples,
    pos_weight: f64,
    cfg: &ModelConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(Model<f32>, TrainHistory), ModelError> {
    cfg.validate_architecture()?;
    cfg.validate_schedule()?;
    let positives = train.labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == train.len() {
        return Err(ModelError::SingleClass {
            positives,
            negatives: train.len() - positives,
        });
    }
    if train.dims[0] != cfg.in_channels {
        return Err(ModelError::Shape {
            expected: format!("{} input channels", cfg.in_channels),
            found: format!("{}", train.dims[0]),
        });
    }
    let mut model: Model<f32> = Model::new(cfg.clone(), &mut seed::rng(cfg.seed, &["init"]))?;
    let mut adam = AdamState::new(&model.params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Params<f32>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut seed::rng(cfg.seed, &["shuffle", &epoch.to_string()]));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = train.gather::<f32>(chunk)?;
            let labels: Vec<u8> = chunk.iter().map(|&i| train.labels[i]).collect();
            let (logits, tape) = model.forward_train(&x)?;
            let logits: Vec<f64> = logits.iter().map(|z| z.f64()).collect();
            let (loss, dlogits) = weighted_bce(&logits, &labels, pos_weight)?;
            if !loss.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            let dlogits: Vec<f32> = dlogits.iter().map(|&d| d as f32).collect();
            let grads = model.backward(&tape, &dlogits);
            adam_step(&cfg.adam, &mut adam, &mut model.params, &grads, cfg.learning_rate)?;
            model.update_running_stats(&tape);
            loss_sum += loss * chunk.len() as f64;
        }
        let scores = predict_samples(&model, test)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            test_ba: metrics::balanced_accuracy(&scores, &test.labels, 0.5).unwrap_or(f64::NAN),
            test_auc: metrics::roc_auc(&scores, &test.labels).unwrap_or(f64::NAN),
        };
        if !model.params.all_finite() {
            return Err(ModelError::Diverged { epoch });
        }
        if stats.test_ba.is_finite() && best.as_ref().is_none_or(|(ba, _, _)| stats.test_ba > *ba) {
            best = Some((stats.test_ba, epoch, model.params.clone()));
        }
        on_epoch(&stats);
        history.push(stats);
    }
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.params = params;
            epoch
        }
        None => cfg.epochs,
    };
    Ok((
        model,
        TrainHistory {
            epochs: history,
            best_epoch,
        },
    ))
}

/// Trains on `train`, selecting the checkpoint by balanced accuracy on
/// `test`. The positive weight comes from the training dataset.
pub fn train(train: &LabeledDataset, test: &LabeledDataset, cfg: &ModelConfig) -> Result<(Model<f32>, TrainHistory), ModelError> {
    train_samples(&Samples::from_dataset(train), &Samples::from_dataset(test), train.pos_weight, cfg, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Items whose channel 0 carries a label-dependent offset.
    fn separable(n: usize, seed: u64) -> (Vec<Vec<f32>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut items = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = u8::from(i % 3 == 0);
            let item: Vec<f32> = (0..2 * 8 * 8)
                .map(|j| rng.random_range(-1.0f32..1.0) + if y == 1 && j < 64 { 1.5 } else { 0.0 })
                .collect();
            items.push(item);
            labels.push(y);
        }
        (items, labels)
    }

    fn samples<'a>(items: &'a [Vec<f32>], labels: &[u8]) -> Samples<'a> {
        Samples {
            dims: [2, 8, 8],
            items: items.iter().map(Vec::as_slice).collect(),
            labels: labels.to_vec(),
        }
    }

    fn cfg(epochs: usize, lr: f64) -> ModelConfig {
        ModelConfig {
            in_channels: 2,
            stem_channels: 4,
            blocks: vec![(4, 1)],
            epochs,
            learning_rate: lr,
            batch_size: 16,
            seed: 11,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn loss_decreases_and_separates() {
        let (xi, yi) = separable(96, 1);
        let (xt, yt) = separable(48, 2);
        let (model, hist) = train_samples(&samples(&xi, &yi), &samples(&xt, &yt), 3.0, &cfg(16, 1e-2), |_| {}).unwrap();
        assert_eq!(hist.epochs.len(), 16);
        assert!(hist.epochs.last().unwrap().train_loss < hist.epochs[0].train_loss);
        let best = hist.epochs[hist.best_epoch - 1].test_ba;
        assert!(hist.epochs.iter().all(|e| e.test_ba <= best));
        assert!(best > 0.8, "{best}");
        let scores = predict_samples(&model, &samples(&xt, &yt)).unwrap();
        assert!(scores.iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn deterministic() {
        let (xi, yi) = separable(40, 3);
        let run = || train_samples(&samples(&xi, &yi), &samples(&xi, &yi), 2.0, &cfg(3, 1e-3), |_| {}).unwrap();
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(h1, h2);
        assert_eq!(m1.params, m2.params);
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let (xi, yi) = separable(40, 4);
        let c = ModelConfig { batch_size: 64, ..cfg(3, 0.0) };
        let init: Model<f32> = Model::new(c.clone(), &mut seed::rng(c.seed, &["init"])).unwrap();
        let (m, h) = train_samples(&samples(&xi, &yi), &samples(&xi, &yi), 2.0, &c, |_| {}).unwrap();
        for (a, b) in m.params.tensors.iter().zip(&init.params.tensors) {
            if a.trainable {
                assert_eq!(a.data, b.data, "{}", a.name);
            }
        }
        let l0 = h.epochs[0].train_loss;
        assert!(h.epochs.iter().all(|e| ((e.train_loss - l0) / l0).abs() < 1e-5));
    }

    #[test]
    fn single_class_rejected() {
        let (xi, _) = separable(10, 5);
        let labels = vec![0u8; 10];
        let err = train_samples(&samples(&xi, &labels), &samples(&xi, &labels), 1.0, &cfg(1, 1e-3), |_| {});
        assert!(matches!(err, Err(ModelError::SingleClass { .. })));
    }

    #[test]
    fn empty_prediction() {
        let m: Model<f32> = Model::new(cfg(1, 1e-3), &mut seed::rng(0, &[])).unwrap();
        let s = Samples {
            dims: [2, 8, 8],
            items: vec![],
            labels: vec![],
        };
        assert!(predict_samples(&m, &s).unwrap().is_empty());
    }
}
