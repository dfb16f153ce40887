use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{images_to_tensor, Arch, ExtractorModel, ModelError, TrainMeta};
use crate::dataset::{IdentityDataset, ImageTensor};
use crate::numerics::{Graph, NumericsError};

/// Per-epoch learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// `lr · (1 + cos(π · epoch / epochs)) / 2`.
    #[default]
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => base * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos()),
        }
    }
}

/// Mini-batch SGD with classical momentum and L2 weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Momentum coefficient in `[0, 1)`; zero gives plain SGD.
    pub momentum: f64,
    pub schedule: LrSchedule,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            learning_rate: 0.05,
            weight_decay: 1e-4,
            momentum: 0.9,
            schedule: LrSchedule::Cosine,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults tuned per architecture: the flat mlp memorizes the training
    /// identities quickly, so it gets a smaller rate and fewer epochs.
    pub fn for_arch(arch: Arch) -> Self {
        match arch {
            Arch::TinyCnn => Self::default(),
            Arch::Mlp => Self {
                epochs: 30,
                learning_rate: 0.001,
                ..Self::default()
            },
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::InvalidConfig(m));
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Sample-weighted mean cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
    /// Accuracy of the final weights over the whole training set.
    pub final_train_accuracy: f64,
}

/// Fraction of images whose arg-max logit is their class index.
pub fn accuracy(model: &ExtractorModel, data: &IdentityDataset) -> Result<f64, ModelError> {
    let classes = model.spec().class_count;
    let samples: Vec<(usize, &ImageTensor)> = data.images().collect();
    let mut correct = 0usize;
    for chunk in samples.chunks(32) {
        let imgs: Vec<&ImageTensor> = chunk.iter().map(|(_, img)| *img).collect();
        let mut g = Graph::new();
        let x = g.constant(images_to_tensor(&imgs, model.spec().input.dims())?)?;
        let fwd = model.forward(&mut g, x, false)?;
        let logits = g.value(fwd.logits)?.data();
        for ((label, _), row) in chunk.iter().zip(logits.chunks_exact(classes)) {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            if best.0 == *label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Trains the classification head and backbone on identity labels with
/// softmax cross-entropy. Identities map to classes in label order.
pub fn train_classifier(
    mut model: ExtractorModel,
    data: &IdentityDataset,
    cfg: &TrainConfig,
) -> Result<(ExtractorModel, TrainReport), ModelError> {
    cfg.validate()?;
    if model.spec().class_count != data.identity_count() {
        return Err(ModelError::ClassCountMismatch {
            model: model.spec().class_count,
            dataset: data.identity_count(),
        });
    }
    let dims = model.spec().input.dims();
    if data.image_shape() != dims {
        return Err(ModelError::InputShape {
            expected: dims,
            got: data.image_shape(),
        });
    }

    let samples: Vec<(usize, &ImageTensor)> = data.images().collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut velocity: std::collections::BTreeMap<String, Vec<f64>> = model
        .weights()
        .iter()
        .map(|(k, t)| (k.clone(), vec![0.0; t.numel()]))
        .collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.schedule.rate(cfg.learning_rate, epoch, cfg.epochs);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let imgs: Vec<&ImageTensor> = batch.iter().map(|&i| samples[i].1).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| samples[i].0).collect();
            let step = |model: &ExtractorModel| -> Result<_, NumericsError> {
                let mut g = Graph::new();
                let x = g.constant(images_to_tensor(&imgs, dims).map_err(|e| match e {
                    ModelError::Numerics(n) => n,
                    other => unreachable!("shapes validated above: {other}"),
                })?)?;
                let fwd = model.forward(&mut g, x, true)?;
                let loss = g.softmax_xent(fwd.logits, &labels)?;
                let value = g.value(loss)?.data()[0];
                let grads = g.backward(loss)?;
                Ok((value, grads, fwd.params))
            };
            let (value, mut grads, params) = step(&model).map_err(|source| ModelError::Diverged { epoch, source })?;
            loss_sum += value * batch.len() as f64;

            for (name, weight) in model.weights_mut().iter_mut() {
                let Some(grad) = grads.take(params[name]) else { continue };
                let v = velocity.get_mut(name).expect("velocity per weight");
                let w = Arc::make_mut(weight);
                for ((wi, vi), gi) in w.data_mut().iter_mut().zip(v.iter_mut()).zip(grad.data()) {
                    *vi = cfg.momentum * *vi + gi + cfg.weight_decay * *wi;
                    *wi -= lr * *vi;
                }
                if let Some(index) = w.data().iter().position(|x| !x.is_finite()) {
                    return Err(ModelError::Diverged {
                        epoch,
                        source: NumericsError::NonFinite { op: "sgd_update", index },
                    });
                }
            }
        }
        epoch_losses.push(loss_sum / samples.len() as f64);
        log::debug!("epoch {epoch}: loss {:.5}", epoch_losses[epoch]);
    }

    let final_train_accuracy = accuracy(&model, data)?;
    model.set_train_meta(TrainMeta {
        dataset_fingerprint: data.fingerprint(),
        epochs: cfg.epochs as u32,
        final_train_accuracy,
        rng_seed: cfg.rng_seed,
    });
    Ok((
        model,
        TrainReport {
            epoch_losses,
            final_train_accuracy,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetRole, ImageTensor};
    use crate::extractor::{init_model, ExtractorSpec, InputShape};
    use std::collections::BTreeMap;

    /// Identity 0 is bright on the left half, identity 1 on the right half;
    /// per-image jitter stays well inside the 0.6 contrast margin.
    fn separable(side: usize, per_identity: usize) -> IdentityDataset {
        let mut entries = BTreeMap::new();
        for (id, label) in ["left", "right"].into_iter().enumerate() {
            let images = (0..per_identity)
                .map(|k| {
                    let jitter = 0.02 * k as f64;
                    let pixels = (0..side * side)
                        .map(|i| {
                            let left = (i % side) < side / 2;
                            if left == (id == 0) { 0.8 - jitter } else { 0.2 + jitter }
                        })
                        .collect();
                    ImageTensor::new(side, side, 1, pixels).unwrap()
                })
                .collect();
            entries.insert(label.to_string(), images);
        }
        IdentityDataset::new(DatasetRole::Train, entries).unwrap()
    }

    #[test]
    fn separable_pair_reaches_full_accuracy() {
        let data = separable(16, 4);
        for spec in [
            ExtractorSpec::tiny_cnn(InputShape::square(16, 1), 8, 2),
            ExtractorSpec::mlp(InputShape::square(16, 1), 8, 2),
        ] {
            let model = init_model(spec, 3).unwrap();
            let cfg = TrainConfig {
                epochs: 20,
                batch_size: 4,
                ..TrainConfig::default()
            };
            let (trained, report) = train_classifier(model, &data, &cfg).unwrap();
            assert_eq!(report.final_train_accuracy, 1.0, "{:?}", report.epoch_losses);
            assert_eq!(trained.train_meta().unwrap().epochs, 20);
        }
    }

    #[test]
    fn zero_epochs_only_fills_metadata() {
        let data = separable(16, 2);
        let model = init_model(ExtractorSpec::mlp(InputShape::square(16, 1), 4, 2), 0).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (trained, report) = train_classifier(model.clone(), &data, &cfg).unwrap();
        assert_eq!(trained.weights(), model.weights());
        assert!(report.epoch_losses.is_empty());
        let meta = trained.train_meta().unwrap();
        assert_eq!(meta.epochs, 0);
        assert_eq!(meta.dataset_fingerprint, data.fingerprint());
    }

    #[test]
    fn class_count_mismatch_fails_before_training() {
        let data = separable(16, 2);
        let model = init_model(ExtractorSpec::mlp(InputShape::square(16, 1), 4, 3), 0).unwrap();
        assert!(matches!(
            train_classifier(model, &data, &TrainConfig::default()),
            Err(ModelError::ClassCountMismatch { model: 3, dataset: 2 })
        ));
    }
}
