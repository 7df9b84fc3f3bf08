//! Training loop, optimizers, and the cross-validation harness.

pub mod cv;
pub mod metrics;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Sample;
use crate::model::{Classifier, ModelError, ModelKind};
use crate::numerics::{ParamStore, Scalar};

pub use cv::{cross_validate, cross_validate_seeds, CvError, CvReport, FoldResult, SeedRun};
pub use metrics::{compute_metrics, update_confusion, Confusion, Metrics, MetricsError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Total optimizer-step cap; when set, passes repeat until it is
    /// reached and `epochs` is ignored.
    pub max_iterations: Option<usize>,
    /// L2 coefficient for the SVM baseline.
    pub svm_l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 6,
            learning_rate: 2e-5,
            batch_size: 1,
            seed: 42,
            optimizer: OptimizerKind::Adam,
            max_iterations: None,
            svm_l2: 1e-4,
        }
    }
}

impl TrainConfig {
    /// Defaults per model family: the encoder family fine-tunes for six
    /// epochs at 2e-5 with Adam; classic baselines run 8000 SGD iterations
    /// at 2e-2.
    pub fn for_kind(kind: ModelKind) -> TrainConfig {
        if kind.is_encoder_family() {
            TrainConfig::default()
        } else {
            TrainConfig {
                learning_rate: 2e-2,
                optimizer: OptimizerKind::Sgd,
                max_iterations: Some(8000),
                ..TrainConfig::default()
            }
        }
    }
}

/// Plain SGD or Adam over whichever parameters carry gradients.
pub enum Optimizer<S: Scalar> {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64, t: u64, m: BTreeMap<String, Vec<S>>, v: BTreeMap<String, Vec<S>> },
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                t: 0,
                m: BTreeMap::new(),
                v: BTreeMap::new(),
            },
        }
    }

    /// Applies one update from the gradients accumulated in the store and
    /// clears them. `scale` divides the gradients (batch averaging).
    pub fn step(&mut self, params: &mut ParamStore<S>, scale: f64) {
        let inv = S::from_f64(1.0 / scale);
        match self {
            Optimizer::Sgd { lr } => {
                let lr = S::from_f64(*lr);
                for (_, t) in params.iter_mut() {
                    if let Some(g) = t.grad.take() {
                        for (p, gv) in t.data.iter_mut().zip(&g) {
                            *p = *p - lr * *gv * inv;
                        }
                    }
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps, t, m, v } => {
                *t += 1;
                let b1 = S::from_f64(*beta1);
                let b2 = S::from_f64(*beta2);
                let one = S::one();
                let bc1 = S::from_f64(1.0 - beta1.powi(*t as i32));
                let bc2 = S::from_f64(1.0 - beta2.powi(*t as i32));
                let lr = S::from_f64(*lr);
                let eps = S::from_f64(*eps);
                for (name, tensor) in params.iter_mut() {
                    if let Some(g) = tensor.grad.take() {
                        let ms = m.entry(name.to_string()).or_insert_with(|| vec![S::zero(); g.len()]);
                        let vs = v.entry(name.to_string()).or_insert_with(|| vec![S::zero(); g.len()]);
                        for i in 0..g.len() {
                            let gi = g[i] * inv;
                            ms[i] = b1 * ms[i] + (one - b1) * gi;
                            vs[i] = b2 * vs[i] + (one - b2) * gi * gi;
                            let mhat = ms[i] / bc1;
                            let vhat = vs[i] / bc2;
                            tensor.data[i] = tensor.data[i] - lr * mhat / (vhat.sqrt() + eps);
                        }
                    }
                }
            }
        }
    }
}

/// Trains in place and returns the mean loss of each pass over the data.
/// Sample order is a fresh seeded shuffle per pass; with `max_iterations`
/// set, passes repeat until the step cap is hit.
pub fn train<S: Scalar>(
    model: &mut dyn Classifier<S>,
    samples: &[Sample],
    config: &TrainConfig,
) -> Result<Vec<f64>, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut losses = Vec::new();
    let batch = config.batch_size.max(1);
    let mut steps = 0usize;
    let passes_limit = match config.max_iterations {
        Some(_) => usize::MAX,
        None => config.epochs,
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    'outer: for _pass in 0..passes_limit {
        order.shuffle(&mut rng);
        let mut pass_loss = 0.0;
        let mut pass_count = 0usize;
        for chunk in order.chunks(batch) {
            for &i in chunk {
                let loss = model.accumulate_grads(&samples[i])?;
                pass_loss += loss.to_f64();
                pass_count += 1;
            }
            opt.step(model.params_mut(), chunk.len() as f64);
            steps += 1;
            if let Some(cap) = config.max_iterations {
                if steps >= cap {
                    losses.push(pass_loss / pass_count as f64);
                    break 'outer;
                }
            }
        }
        losses.push(pass_loss / pass_count as f64);
    }
    Ok(losses)
}
