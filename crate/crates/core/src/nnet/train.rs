use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::row_losses;
use super::{init, layers, loss_and_gradient, LossCurve, LossKind, Matrix, NetworkSpec, NnetError, Parameters, Result, Targets};
use crate::dataset::Dataset;
use crate::rng;

/// Rows evaluated per forward pass when no gradient is needed.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: LossKind,
    pub shuffle_seed: u64,
    pub init_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.05,
            loss: LossKind::CrossEntropy,
            shuffle_seed: 0,
            init_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(NnetError::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(NnetError::InvalidConfig(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// Same config with the per-run seeds replaced.
    pub fn with_seeds(&self, init_seed: u64, shuffle_seed: u64) -> Self {
        Self {
            init_seed,
            shuffle_seed,
            ..self.clone()
        }
    }

    /// Hash of everything except the seeds. Runs that share hyperparameters
    /// share a digest.
    pub fn hyperparameter_digest(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.epochs.hash(&mut h);
        self.batch_size.hash(&mut h);
        self.learning_rate.to_bits().hash(&mut h);
        self.loss.hash(&mut h);
        h.finish()
    }
}

fn features(dataset: &Dataset) -> Matrix {
    let cols = dataset.feature_shape().len();
    let mut data = Vec::with_capacity(dataset.len() * cols);
    for s in dataset.samples() {
        data.extend_from_slice(&s.features);
    }
    Matrix::from_vec(dataset.len(), cols, data)
}

fn check_dataset(spec: &NetworkSpec, dataset: &Dataset, loss: LossKind) -> Result<()> {
    if dataset.feature_shape().len() != spec.input_shape.len() {
        return Err(NnetError::shape(
            None,
            format!(
                "dataset features {} do not fit network input {}",
                dataset.feature_shape(),
                spec.input_shape
            ),
        ));
    }
    spec.check_classifier(dataset.num_classes(), loss)
}

/// `w - lr * g`, elementwise.
pub fn sgd_step(params: &Parameters, gradients: &Parameters, learning_rate: f64) -> Result<Parameters> {
    let mut next = params.clone();
    sgd_update(&mut next, gradients, learning_rate)?;
    Ok(next)
}

fn sgd_update(params: &mut Parameters, gradients: &Parameters, learning_rate: f64) -> Result<()> {
    if !params.same_shape(gradients) {
        return Err(NnetError::shape(None, "gradients do not match parameters"));
    }
    for (w, g) in params.values_mut().zip(gradients.values()) {
        *w -= learning_rate * g;
    }
    Ok(())
}

/// Loss of every sample on its own, in dataset order.
pub fn per_sample_losses(
    params: &Parameters,
    spec: &NetworkSpec,
    dataset: &Dataset,
    loss: LossKind,
) -> Result<Vec<f64>> {
    check_dataset(spec, dataset, loss)?;
    let x = features(dataset);
    let labels: Vec<usize> = dataset.labels().collect();
    layers::check_inputs(params, spec, &x)?;
    let mut out = Vec::with_capacity(dataset.len());
    let rows: Vec<usize> = (0..dataset.len()).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let batch = x.select_rows(chunk);
        let y = layers::run_forward(params, spec, &batch, false).output();
        out.extend(row_losses(loss, &y, Targets::Classes(&labels[chunk[0]..chunk[0] + chunk.len()]))?);
    }
    Ok(out)
}

/// Mean loss over a whole dataset. Never touches `params`.
pub fn evaluate_loss(params: &Parameters, spec: &NetworkSpec, dataset: &Dataset, loss: LossKind) -> Result<f64> {
    let losses = per_sample_losses(params, spec, dataset, loss)?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

pub fn train(spec: &NetworkSpec, train_set: &Dataset, val_set: &Dataset, config: &TrainConfig) -> Result<LossCurve> {
    Ok(train_model(spec, train_set, val_set, config)?.1)
}

/// Mini-batch SGD from a fresh [`init`], returning the final weights too.
///
/// Each epoch reshuffles the training set from the `shuffle_seed` stream,
/// steps through every batch (the last may be short), records the mean of the
/// batch losses, then scores the validation set once with the updated weights.
pub fn train_model(
    spec: &NetworkSpec,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
) -> Result<(Parameters, LossCurve)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(NnetError::InvalidConfig(
            "training and validation sets must be non-empty".into(),
        ));
    }
    check_dataset(spec, train_set, config.loss)?;
    check_dataset(spec, val_set, config.loss)?;

    let mut params = init(spec, config.init_seed)?;
    let mut shuffle = rng::seeded(config.shuffle_seed);
    let x = features(train_set);
    let labels: Vec<usize> = train_set.labels().collect();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut curve = LossCurve::default();

    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        let mut batches = 0usize;
        let mut batch_labels = Vec::with_capacity(config.batch_size);
        for chunk in order.chunks(config.batch_size) {
            let batch = x.select_rows(chunk);
            batch_labels.clear();
            batch_labels.extend(chunk.iter().map(|&i| labels[i]));
            let (loss, grads) = loss_and_gradient(&params, spec, &batch, Targets::Classes(&batch_labels), config.loss)?;
            if !loss.is_finite() {
                return Err(NnetError::NonFiniteLoss { epoch, value: loss });
            }
            sgd_update(&mut params, &grads, config.learning_rate)?;
            total += loss;
            batches += 1;
        }
        let train_loss = total / batches as f64;
        let val_loss = evaluate_loss(&params, spec, val_set, config.loss)?;
        if !val_loss.is_finite() || !params.is_finite() {
            return Err(NnetError::NonFiniteLoss { epoch, value: val_loss });
        }
        curve.train_loss.push(train_loss);
        curve.val_loss.push(val_loss);
    }
    Ok((params, curve))
}
