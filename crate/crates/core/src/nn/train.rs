//! Mini-batch RMSProp training with early stopping on validation loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{cross_entropy, loss_and_param_grad, predict};
use super::model::ModelSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Anything that carries an input image and a class label.
pub trait Labeled {
    fn image(&self) -> &Tensor;
    fn label(&self) -> usize;
}

impl Labeled for (Tensor, usize) {
    fn image(&self) -> &Tensor {
        &self.0
    }

    fn label(&self) -> usize {
        self.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    /// Decay of the running mean of squared gradients.
    pub rho: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            rho: 0.9,
            epsilon: 1e-8,
            batch_size: 8,
            max_epochs: 30,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("training config: {msg}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be positive");
        }
        if self.max_epochs > 0 && self.patience > self.max_epochs {
            return bad("patience must not exceed max_epochs");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were returned; 0 means the initial weights.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
struct RmsProp {
    lr: f64,
    rho: f64,
    eps: f64,
    mean_sq: Vec<f64>,
}

impl RmsProp {
    fn new(cfg: &TrainingConfig, n: usize) -> Self {
        Self {
            lr: cfg.learning_rate,
            rho: cfg.rho,
            eps: cfg.epsilon,
            mean_sq: vec![0.0; n],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut self.mean_sq) {
            *v = self.rho * *v + (1.0 - self.rho) * g * g;
            *p -= self.lr * g / (v.sqrt() + self.eps);
        }
    }
}

fn check_dataset<S: Labeled>(model: &ModelSpec, set: &[S], name: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::EmptyDataset(name.to_string()));
    }
    let classes = model.num_classes();
    for (i, s) in set.iter().enumerate() {
        if s.label() >= classes {
            return Err(Error::ClassOutOfRange {
                class: s.label(),
                num_classes: classes,
            });
        }
        s.image().check_shape(&model.input_shape()).map_err(|e| {
            Error::InvalidArgument(format!("{name} sample {i}: {e}"))
        })?;
    }
    Ok(())
}

/// Mean cross-entropy and accuracy over a dataset.
pub fn evaluate_loss<S: Labeled + Sync>(model: &ModelSpec, set: &[S]) -> Result<(f64, f64)> {
    check_dataset(model, set, "evaluation set")?;
    let per_sample: Vec<(f64, bool)> = set
        .par_iter()
        .map(|s| {
            let p = predict(model, s.image())?;
            let loss = cross_entropy(p.data()[s.label()]);
            Ok((loss, p.argmax() == s.label()))
        })
        .collect::<Result<_>>()?;
    let n = per_sample.len() as f64;
    let loss = per_sample.iter().map(|(l, _)| l).sum::<f64>() / n;
    let acc = per_sample.iter().filter(|(_, ok)| *ok).count() as f64 / n;
    Ok((loss, acc))
}

/// Fraction of samples whose arg-max prediction (lowest index on ties)
/// equals the label.
pub fn evaluate_accuracy<S: Labeled + Sync>(model: &ModelSpec, set: &[S]) -> Result<f64> {
    evaluate_loss(model, set).map(|(_, acc)| acc)
}

pub fn train<S: Labeled + Sync>(
    model: &ModelSpec,
    train_set: &[S],
    val_set: &[S],
    cfg: &TrainingConfig,
) -> Result<(ModelSpec, TrainingHistory)> {
    train_with_progress(model, train_set, val_set, cfg, |_| {})
}

/// Trains a copy of `model`, calling `on_epoch` after every epoch.
///
/// Per-sample gradients of a batch may be computed in parallel; they are
/// summed in sample order so the result does not depend on thread count.
pub fn train_with_progress<S: Labeled + Sync>(
    model: &ModelSpec,
    train_set: &[S],
    val_set: &[S],
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelSpec, TrainingHistory)> {
    cfg.validate()?;
    check_dataset(model, train_set, "training set")?;
    check_dataset(model, val_set, "validation set")?;

    let mut current = model.clone();
    let mut params = current.parameters();
    let mut optimizer = RmsProp::new(cfg, params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let (initial_val, _) = evaluate_loss(&current, val_set)?;
    let mut history = TrainingHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: initial_val,
        stopped_early: false,
    };
    let mut best_params = params.clone();
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| loss_and_param_grad(&current, train_set[i].image(), train_set[i].label()))
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; params.len()];
            for (loss, g) in &results {
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss(format!(
                        "epoch {epoch}: per-sample loss {loss}"
                    )));
                }
                loss_sum += loss;
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            optimizer.step(&mut params, &grad);
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFiniteLoss(format!(
                    "epoch {epoch}: parameters became non-finite"
                )));
            }
            current.set_parameters(&params)?;
        }

        let (val_loss, val_accuracy) = evaluate_loss(&current, val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("epoch {epoch}: validation loss {val_loss}")));
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            val_accuracy,
        };
        on_epoch(&record);
        history.epochs.push(record);

        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best_params.clone_from(&params);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }

    let mut best = model.clone();
    best.set_parameters(&best_params)?;
    Ok((best, history))
}
