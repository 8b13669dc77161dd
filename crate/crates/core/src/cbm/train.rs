use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, ActivationMatrix, CbmModel, EpochLog};
use crate::error::{Error, Result};
use crate::tensor_io::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            lambda: 1e-4,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            optimizer: Optimizer::Adam,
            bias: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument("lambda must be >= 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Rows of features (`labels.len() x model.k`, row-major) and their labels.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub features: &'a [f64],
    pub labels: &'a [usize],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    /// Same layout as [`CbmModel::weights`].
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean softmax cross-entropy plus `lambda * |W|_1` and its (sub)gradient,
/// with `sign(0) = 0`. The bias is not regularized.
pub fn loss_and_grad(model: &CbmModel, batch: Batch<'_>) -> Result<(f64, Gradient)> {
    let mut grad = Gradient {
        weights: vec![0.0; model.weights.len()],
        bias: model.bias.as_ref().map(|b| vec![0.0; b.len()]),
    };
    let (loss, _) = forward_backward(model, batch, &mut grad)?;
    Ok((loss, grad))
}

/// Returns `(loss, correct predictions)` and fills `grad`.
fn forward_backward(model: &CbmModel, batch: Batch<'_>, grad: &mut Gradient) -> Result<(f64, usize)> {
    let (k, c) = (model.k, model.classes);
    if k == 0 {
        return Err(Error::InvalidArgument("model has no input features".into()));
    }
    let n = batch.labels.len();
    if n == 0 {
        return Err(Error::EmptyInput("empty batch"));
    }
    if batch.features.len() != n * k {
        return Err(Error::DimensionMismatch {
            expected: n * k,
            found: batch.features.len(),
        });
    }
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= c) {
        return Err(Error::InvalidArgument(format!("label {bad} >= {c} classes")));
    }
    grad.weights.fill(0.0);
    if let Some(b) = grad.bias.as_mut() {
        b.fill(0.0);
    }

    let inv_n = 1.0 / n as f64;
    let mut ce = 0.0;
    let mut correct = 0;
    let mut z = vec![0.0f64; c];
    for (x, &y) in batch.features.chunks_exact(k).zip(batch.labels) {
        model.logits_into(x, &mut z);
        if argmax(&z) == y {
            correct += 1;
        }
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
        let lse = zmax + sum.ln();
        ce += lse - z[y];
        // z becomes (softmax - onehot) / n
        for (i, v) in z.iter_mut().enumerate() {
            let p = (*v - lse).exp();
            *v = (p - if i == y { 1.0 } else { 0.0 }) * inv_n;
        }
        for (j, &a) in x.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            grad.weights[j * c..(j + 1) * c]
                .iter_mut()
                .zip(&z)
                .for_each(|(g, d)| *g += a * d);
        }
        if let Some(b) = grad.bias.as_mut() {
            b.iter_mut().zip(&z).for_each(|(g, d)| *g += d);
        }
    }
    let mut loss = ce * inv_n;
    if model.lambda != 0.0 {
        loss += model.lambda * model.weights.iter().map(|w| w.abs()).sum::<f64>();
        for (g, &w) in grad.weights.iter_mut().zip(&model.weights) {
            *g += model.lambda * sign(w);
        }
    }
    Ok((loss, correct))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Mini-batch training from zero weights. Each epoch visits the rows in a
/// permutation drawn from stream `epoch` of a ChaCha8 generator seeded with
/// `cfg.seed`, so runs are reproducible bit for bit.
pub fn train(activations: &ActivationMatrix, labels: &[usize], cfg: &TrainConfig) -> Result<CbmModel> {
    cfg.validate()?;
    let n = activations.rows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyInput("no training rows"));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    if classes < 2 {
        return Err(Error::InvalidArgument("training needs at least two classes".into()));
    }
    let k = activations.k();
    if k == 0 {
        return Err(Error::InvalidArgument("no features to train on".into()));
    }
    let features: Vec<f64> = activations.values().iter().map(|&v| f64::from(v)).collect();

    let mut model = CbmModel::zeros(k, classes, cfg.bias, cfg.lambda);
    model.config = Some(*cfg);
    let mut grad = Gradient {
        weights: vec![0.0; k * classes],
        bias: cfg.bias.then(|| vec![0.0; classes]),
    };
    let mut adam_w = Adam::new(k * classes);
    let mut adam_b = Adam::new(if cfg.bias { classes } else { 0 });

    let mut order: Vec<usize> = (0..n).collect();
    let mut batch_x = Vec::with_capacity(cfg.batch_size * k);
    let mut batch_y = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(cfg.batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.extend_from_slice(&features[i * k..(i + 1) * k]);
                batch_y.push(labels[i]);
            }
            let (loss, hits) = forward_backward(
                &model,
                Batch {
                    features: &batch_x,
                    labels: &batch_y,
                },
                &mut grad,
            )?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {loss} in epoch {epoch} (lr {}, lambda {})",
                    cfg.learning_rate, cfg.lambda
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            correct += hits;

            match cfg.optimizer {
                Optimizer::Adam => {
                    adam_w.update(&mut model.weights, &grad.weights, cfg.learning_rate);
                    if let (Some(b), Some(g)) = (model.bias.as_mut(), grad.bias.as_ref()) {
                        adam_b.update(b, g, cfg.learning_rate);
                    }
                }
                Optimizer::Sgd => {
                    sgd(&mut model.weights, &grad.weights, cfg.learning_rate);
                    if let (Some(b), Some(g)) = (model.bias.as_mut(), grad.bias.as_ref()) {
                        sgd(b, g, cfg.learning_rate);
                    }
                }
            }
        }
        model.training_log.push(EpochLog {
            epoch,
            loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / n as f64,
        });
    }
    if model.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Numeric("training produced non-finite weights".into()));
    }
    Ok(model)
}

fn sgd(params: &mut [f64], grads: &[f64], lr: f64) {
    params.iter_mut().zip(grads).for_each(|(p, g)| *p -= lr * g);
}

/// Baseline: the same training procedure on raw embeddings with no L1 term.
pub fn linear_probe(embeddings: &EmbeddingMatrix, labels: &[usize], cfg: &TrainConfig) -> Result<CbmModel> {
    let features = ActivationMatrix::from_embeddings(embeddings)?;
    let cfg = TrainConfig { lambda: 0.0, ..*cfg };
    train(&features, labels, &cfg)
}
