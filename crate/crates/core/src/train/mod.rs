//! Contrastive training objective at desk scale.
//!
//! [`infonce_loss`] is the per-query objective. [`ToyEncoder`] is a linear
//! stand-in for a trainable retriever so the loss and its analytic gradient
//! can be exercised end to end; [`train_toy`] runs plain gradient descent on
//! it. Hard negatives are mined with BM25 (or an existing dense index).

mod encoder;
mod loss;
mod mine;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use encoder::{batch_loss, infonce_grad, BatchGradient, ToyEncoder};
pub use loss::infonce_loss;
pub use mine::{mine_all, mine_hard_negatives, mine_hard_negatives_dense};

use crate::error::{Error, Result};
use crate::ingest::write_jsonl;

/// A query or document as a fixed feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub id: String,
    pub features: Vec<f64>,
}

impl FeatureVector {
    pub fn new(id: impl Into<String>, features: Vec<f64>) -> Self {
        FeatureVector { id: id.into(), features }
    }
}

/// A query, its positive document and exactly `m` hard negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub query: FeatureVector,
    pub positive: FeatureVector,
    pub negatives: Vec<FeatureVector>,
}

impl TrainingInstance {
    pub fn new(query: FeatureVector, positive: FeatureVector, negatives: Vec<FeatureVector>, m: usize) -> Result<Self> {
        if negatives.len() != m {
            return Err(Error::Invalid(format!(
                "training instance `{}` has {} negatives, expected {m}",
                query.id,
                negatives.len()
            )));
        }
        if negatives.iter().any(|n| n.id == positive.id) {
            return Err(Error::Invalid(format!(
                "training instance `{}` lists its positive `{}` as a negative",
                query.id, positive.id
            )));
        }
        Ok(TrainingInstance {
            query,
            positive,
            negatives,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub tau: f64,
    pub learning_rate: f64,
    /// Instances per step; batches cycle through the data in order.
    pub batch_size: usize,
    pub steps: usize,
}

impl Default for TrainConfig {
    /// Toy defaults, sized for the synthetic data.
    fn default() -> Self {
        TrainConfig {
            tau: 0.1,
            learning_rate: 0.05,
            batch_size: 16,
            steps: 200,
        }
    }
}

impl TrainConfig {
    /// The published full-scale recipe: batch 512, learning rate 1e-5, 3
    /// epochs over `num_instances`, temperature 0.02.
    pub fn full_scale(num_instances: usize) -> Self {
        let batch_size = 512;
        TrainConfig {
            tau: 0.02,
            learning_rate: 1e-5,
            batch_size,
            steps: 3 * num_instances.div_ceil(batch_size).max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub encoder: ToyEncoder,
    /// Batch loss before each update.
    pub trace: Vec<LossRecord>,
}

/// Plain gradient descent on the mean batch InfoNCE loss.
pub fn train_toy(encoder: ToyEncoder, instances: &[TrainingInstance], config: &TrainConfig) -> Result<TrainOutcome> {
    if config.steps < 1 {
        return Err(Error::Invalid("steps must be >= 1".into()));
    }
    if config.batch_size < 1 {
        return Err(Error::Invalid("batch_size must be >= 1".into()));
    }
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::Invalid("learning_rate must be a non-negative number".into()));
    }
    if instances.is_empty() {
        return Err(Error::Invalid("no training instances".into()));
    }
    let mut encoder = encoder;
    let mut trace = Vec::with_capacity(config.steps);
    let batches: Vec<&[TrainingInstance]> = instances.chunks(config.batch_size).collect();
    for step in 0..config.steps {
        let batch = batches[step % batches.len()];
        let g = infonce_grad(&encoder, batch, config.tau).map_err(|e| match e {
            Error::ZeroNorm => Error::NonFiniteLoss {
                step,
                detail: "an encoded vector collapsed to zero norm".into(),
            },
            other => other,
        })?;
        if !g.loss.is_finite() || g.grad.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!(
                    "loss {} with tau {} and learning rate {}",
                    g.loss, config.tau, config.learning_rate
                ),
            });
        }
        trace.push(LossRecord { step, loss: g.loss });
        if config.learning_rate > 0.0 {
            let w: Vec<f64> = encoder
                .weights()
                .iter()
                .zip(&g.grad)
                .map(|(w, d)| w - config.learning_rate * d)
                .collect();
            encoder.set_weights(w).map_err(|_| Error::NonFiniteLoss {
                step,
                detail: "weights diverged".into(),
            })?;
        }
    }
    Ok(TrainOutcome { encoder, trace })
}

pub fn write_loss_trace(path: impl AsRef<Path>, trace: &[LossRecord]) -> Result<()> {
    write_jsonl(path, trace)
}

/// Linearly separable toy data: `dim` topics, one basis direction each.
///
/// Instance `i` belongs to topic `i % dim`. Its query and its positive sit
/// near that topic's basis vector, and its `m` negatives are documents of
/// other topics. A document id names its topic, so every mention of a
/// document has the same features.
pub fn synthetic_instances(n: usize, dim: usize, m: usize, noise: f64, seed: u64) -> Result<Vec<TrainingInstance>> {
    if m + 1 > dim {
        return Err(Error::Invalid(format!("need dim > m, got dim {dim} and m {m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = |rng: &mut ChaCha8Rng, t: usize| -> Vec<f64> {
        (0..dim)
            .map(|k| if k == t { 1.0 } else { 0.0 } + noise * rng.random_range(-1.0..1.0))
            .collect()
    };
    let docs: Vec<FeatureVector> = (0..dim).map(|t| FeatureVector::new(format!("topic{t}"), jitter(&mut rng, t))).collect();
    (0..n)
        .map(|i| {
            let t = i % dim;
            let query = FeatureVector::new(format!("q{i}"), jitter(&mut rng, t));
            let mut others: Vec<usize> = (0..dim).filter(|&o| o != t).collect();
            for k in 0..m {
                let j = rng.random_range(k..others.len());
                others.swap(k, j);
            }
            let negatives = others[..m].iter().map(|&o| docs[o].clone()).collect();
            TrainingInstance::new(query, docs[t].clone(), negatives, m)
        })
        .collect()
}
