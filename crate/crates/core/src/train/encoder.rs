use rand::Rng;

use super::loss::{check_tau, cross_entropy_first, softmax};
use super::TrainingInstance;
use crate::error::{Error, Result};

/// Linear map over fixed feature vectors followed by unit normalization.
/// Queries and documents share the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    weights: Vec<f64>,
}

impl ToyEncoder {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Invalid("encoder dimensions must be positive".into()));
        }
        let mut e = ToyEncoder {
            in_dim,
            out_dim,
            weights: Vec::new(),
        };
        e.set_weights(weights)?;
        Ok(e)
    }

    /// Weights drawn uniformly from `[-scale, scale]`.
    pub fn random(in_dim: usize, out_dim: usize, scale: f64, rng: &mut impl Rng) -> Result<Self> {
        let w = (0..in_dim * out_dim).map(|_| rng.random_range(-scale..=scale)).collect();
        ToyEncoder::new(in_dim, out_dim, w)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.in_dim * self.out_dim {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim * self.out_dim,
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Invalid("encoder weights must be finite".into()));
        }
        self.weights = weights;
        Ok(())
    }

    /// `W x`, before normalization.
    fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim,
                found: x.len(),
            });
        }
        Ok(self
            .weights
            .chunks_exact(self.in_dim)
            .map(|row| row.iter().zip(x).map(|(w, xi)| w * xi).sum())
            .collect())
    }

    fn encode_with_norm(&self, x: &[f64]) -> Result<Encoded> {
        let z = self.project(x)?;
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm);
        }
        Ok(Encoded {
            unit: z.into_iter().map(|v| v / norm).collect(),
            norm,
        })
    }

    /// Unit-norm embedding of a feature vector.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode_with_norm(x)?.unit)
    }
}

struct Encoded {
    unit: Vec<f64>,
    norm: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-instance candidate lists: the own positive first, then hard
/// negatives, then other instances' positives whose doc id differs.
fn candidate_lists(batch: &[TrainingInstance]) -> Vec<Vec<(usize, Slot)>> {
    batch
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut c = vec![(i, Slot::Positive)];
            c.extend((0..inst.negatives.len()).map(|j| (i, Slot::Negative(j))));
            c.extend(
                batch
                    .iter()
                    .enumerate()
                    .filter(|&(j, other)| j != i && other.positive.id != inst.positive.id)
                    .map(|(j, _)| (j, Slot::Positive)),
            );
            c
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Slot {
    Positive,
    Negative(usize),
}

struct EncodedBatch {
    queries: Vec<Encoded>,
    positives: Vec<Encoded>,
    negatives: Vec<Vec<Encoded>>,
}

impl EncodedBatch {
    fn new(encoder: &ToyEncoder, batch: &[TrainingInstance]) -> Result<Self> {
        let enc = |x: &[f64]| encoder.encode_with_norm(x);
        Ok(EncodedBatch {
            queries: batch.iter().map(|b| enc(&b.query.features)).collect::<Result<_>>()?,
            positives: batch.iter().map(|b| enc(&b.positive.features)).collect::<Result<_>>()?,
            negatives: batch
                .iter()
                .map(|b| b.negatives.iter().map(|n| enc(&n.features)).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?,
        })
    }

    fn doc(&self, (owner, slot): (usize, Slot)) -> &Encoded {
        match slot {
            Slot::Positive => &self.positives[owner],
            Slot::Negative(j) => &self.negatives[owner][j],
        }
    }
}

fn features(batch: &[TrainingInstance], (owner, slot): (usize, Slot)) -> &[f64] {
    match slot {
        Slot::Positive => &batch[owner].positive.features,
        Slot::Negative(j) => &batch[owner].negatives[j].features,
    }
}

/// Mean InfoNCE loss over `batch`, each instance contrasted against its hard
/// negatives and the other instances' positives.
pub fn batch_loss(encoder: &ToyEncoder, batch: &[TrainingInstance], tau: f64) -> Result<f64> {
    Ok(batch_loss_and_grad(encoder, batch, tau, false)?.loss)
}

/// Mean batch loss and its gradient with respect to the encoder weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub loss: f64,
    /// Same layout as [`ToyEncoder::weights`].
    pub grad: Vec<f64>,
}

/// Analytic gradient of [`batch_loss`].
pub fn infonce_grad(encoder: &ToyEncoder, batch: &[TrainingInstance], tau: f64) -> Result<BatchGradient> {
    batch_loss_and_grad(encoder, batch, tau, true)
}

fn batch_loss_and_grad(encoder: &ToyEncoder, batch: &[TrainingInstance], tau: f64, with_grad: bool) -> Result<BatchGradient> {
    check_tau(tau)?;
    if batch.is_empty() {
        return Err(Error::Invalid("training batch is empty".into()));
    }
    let enc = EncodedBatch::new(encoder, batch)?;
    let lists = candidate_lists(batch);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = if with_grad { vec![0.0; encoder.weights.len()] } else { Vec::new() };
    let in_dim = encoder.in_dim;
    for (i, cands) in lists.iter().enumerate() {
        let u = &enc.queries[i];
        let scores: Vec<f64> = cands.iter().map(|&c| dot(&u.unit, &enc.doc(c).unit)).collect();
        let logits: Vec<f64> = scores.iter().map(|s| s / tau).collect();
        loss += scale * cross_entropy_first(&logits);
        if !with_grad {
            continue;
        }
        // dL/ds_k = (p_k - [k = 0]) / tau; ds/dz for z -> z/|z| is (v - s u) / |z|.
        // p_0 - 1 is taken as -sum(p_k, k > 0): a confident positive rounds p_0
        // to exactly 1 and would lose its term.
        let p = softmax(&logits);
        let residual0 = -p[1..].iter().sum::<f64>();
        let xq = &batch[i].query.features;
        for (k, &c) in cands.iter().enumerate() {
            let g = scale * if k == 0 { residual0 } else { p[k] } / tau;
            if g == 0.0 {
                continue;
            }
            let v = enc.doc(c);
            let s = scores[k];
            let xd = features(batch, c);
            for r in 0..encoder.out_dim {
                let aq = g * (v.unit[r] - s * u.unit[r]) / u.norm;
                let ad = g * (u.unit[r] - s * v.unit[r]) / v.norm;
                let row = &mut grad[r * in_dim..(r + 1) * in_dim];
                for ((w, a), b) in row.iter_mut().zip(xq).zip(xd) {
                    *w += aq * a + ad * b;
                }
            }
        }
    }
    Ok(BatchGradient { loss, grad })
}
