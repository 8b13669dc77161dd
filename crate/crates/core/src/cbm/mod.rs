//! Concept activations and the sparse linear concept bottleneck classifier.

mod train;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::concept_bank::ConceptBank;
use crate::error::{Error, Result};
use crate::tensor_io::{self, EmbeddingMatrix};

pub use train::{linear_probe, loss_and_grad, train, Batch, Gradient, Optimizer, TrainConfig};

/// `rows x k` activations, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    rows: usize,
    k: usize,
    values: Vec<f32>,
}

impl ActivationMatrix {
    pub fn new(rows: usize, k: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != rows * k {
            return Err(Error::InvalidMatrix(format!(
                "{} activation values for {rows} x {k}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite activation at ({}, {})",
                i / k.max(1),
                i % k.max(1)
            )));
        }
        Ok(Self { rows, k, values })
    }

    /// Raw embeddings used directly as features (linear probe input).
    pub fn from_embeddings(embeddings: &EmbeddingMatrix) -> Result<Self> {
        Self::new(embeddings.rows(), embeddings.dim(), embeddings.data().to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    /// Keeps only the given concept columns, in the given order.
    pub fn select_concepts(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.k) {
            return Err(Error::InvalidArgument(format!("concept {bad} >= k = {}", self.k)));
        }
        let values = (0..self.rows)
            .flat_map(|i| columns.iter().map(move |&c| self.values[i * self.k + c]))
            .collect();
        Self::new(self.rows, columns.len(), values)
    }
}

/// Projection of each image embedding onto each concept, scaled by the
/// concept's squared norm: `a_ij = <f(x_i), c_j> / |c_j|^2`.
pub fn activations(image_embeddings: &EmbeddingMatrix, bank: &ConceptBank) -> Result<ActivationMatrix> {
    if image_embeddings.dim() != bank.dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.dim(),
            found: image_embeddings.dim(),
        });
    }
    let k = bank.k();
    let centroids: Vec<Vec<f64>> = (0..k)
        .map(|j| bank.centroid(j).iter().map(|&v| f64::from(v)).collect())
        .collect();
    let sq_norms: Vec<f64> = centroids.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    if let Some(j) = sq_norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroNorm(j));
    }
    let mut values = vec![0.0f32; image_embeddings.rows() * k];
    values
        .par_chunks_mut(k.max(1))
        .enumerate()
        .for_each(|(i, out)| {
            let x = image_embeddings.row(i);
            for ((a, c), n) in out.iter_mut().zip(&centroids).zip(&sq_norms) {
                let d: f64 = x.iter().zip(c).map(|(&xv, cv)| f64::from(xv) * cv).sum();
                *a = (d / n) as f32;
            }
        });
    ActivationMatrix::new(image_embeddings.rows(), k, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
}

/// Linear map from `k` concept activations to `classes` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct CbmModel {
    /// `k x classes`, row-major: `weights[j * classes + c]`.
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
    pub lambda: f64,
    pub k: usize,
    pub classes: usize,
    pub training_log: Vec<EpochLog>,
    pub config: Option<TrainConfig>,
}

impl CbmModel {
    pub fn zeros(k: usize, classes: usize, bias: bool, lambda: f64) -> Self {
        Self {
            weights: vec![0.0; k * classes],
            bias: bias.then(|| vec![0.0; classes]),
            lambda,
            k,
            classes,
            training_log: Vec::new(),
            config: None,
        }
    }

    pub fn weight(&self, concept: usize, class: usize) -> f64 {
        self.weights[concept * self.classes + class]
    }

    /// `w^T a (+ b)`.
    pub fn logits_into<T: Copy + Into<f64>>(&self, features: &[T], out: &mut [f64]) {
        match &self.bias {
            Some(b) => out.copy_from_slice(b),
            None => out.fill(0.0),
        }
        for (j, &a) in features.iter().enumerate() {
            let a: f64 = a.into();
            if a == 0.0 {
                continue;
            }
            let row = &self.weights[j * self.classes..(j + 1) * self.classes];
            out.iter_mut().zip(row).for_each(|(o, w)| *o += w * a);
        }
    }

    /// Fraction of weights with magnitude below `threshold`.
    pub fn near_zero_fraction(&self, threshold: f64) -> f64 {
        if self.weights.is_empty() {
            return 0.0;
        }
        self.weights.iter().filter(|w| w.abs() < threshold).count() as f64 / self.weights.len() as f64
    }

    /// Drops the listed concept rows, e.g. after the bank they index changed.
    pub fn select_concepts(&self, concepts: &[usize]) -> Result<Self> {
        let mut weights = Vec::with_capacity(concepts.len() * self.classes);
        for &j in concepts {
            if j >= self.k {
                return Err(Error::InvalidArgument(format!("concept {j} >= k = {}", self.k)));
            }
            weights.extend_from_slice(&self.weights[j * self.classes..(j + 1) * self.classes]);
        }
        Ok(Self {
            weights,
            k: concepts.len(),
            ..self.clone()
        })
    }

    /// Weight matrix as EMB1 (`k x classes`, f32) plus a sidecar holding
    /// lambda, classes, bias, the training config and log.
    pub fn save(&self, path: impl AsRef<Path>, concept_ids: Option<&[String]>) -> Result<()> {
        let ids = match concept_ids {
            Some(ids) if ids.len() == self.k => ids.to_vec(),
            Some(ids) => {
                return Err(Error::DimensionMismatch {
                    expected: self.k,
                    found: ids.len(),
                })
            }
            None => (0..self.k).map(|j| format!("concept_{j}")).collect(),
        };
        let mut matrix = EmbeddingMatrix::new(
            self.k,
            self.classes,
            self.weights.iter().map(|&w| w as f32).collect(),
            ids,
        )?;
        let meta = ModelMeta {
            lambda: self.lambda,
            classes: self.classes,
            bias: self.bias.clone(),
            config: self.config,
            final_loss: self.training_log.last().map(|l| l.loss),
            final_train_accuracy: self.training_log.last().map(|l| l.train_accuracy),
            training_log: self.training_log.clone(),
        };
        if let Value::Object(map) = serde_json::to_value(meta)? {
            matrix.meta.extra = map;
        }
        tensor_io::write_embeddings(&matrix, path)
    }

    /// Loads a saved model and the concept ids its rows were saved under.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Vec<String>)> {
        let matrix = tensor_io::read_embeddings(path)?;
        let meta: ModelMeta = serde_json::from_value(Value::Object(matrix.meta.extra.clone()))?;
        if meta.classes != matrix.dim() {
            return Err(Error::SidecarMismatch(format!(
                "sidecar says {} classes, weight matrix has {} columns",
                meta.classes,
                matrix.dim()
            )));
        }
        if meta.bias.as_ref().is_some_and(|b| b.len() != meta.classes) {
            return Err(Error::SidecarMismatch("bias length differs from class count".into()));
        }
        let model = Self {
            weights: matrix.data().iter().map(|&w| f64::from(w)).collect(),
            bias: meta.bias,
            lambda: meta.lambda,
            k: matrix.rows(),
            classes: meta.classes,
            training_log: meta.training_log,
            config: meta.config,
        };
        Ok((model, matrix.row_ids().to_vec()))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    lambda: f64,
    classes: usize,
    bias: Option<Vec<f64>>,
    config: Option<TrainConfig>,
    final_loss: Option<f64>,
    final_train_accuracy: Option<f64>,
    #[serde(default)]
    training_log: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    /// `rows x classes`, row-major.
    pub logits: Vec<f64>,
    pub classes: usize,
}

impl Prediction {
    pub fn logits_of(&self, i: usize) -> &[f64] {
        &self.logits[i * self.classes..(i + 1) * self.classes]
    }
}

/// First index of the maximum.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict(model: &CbmModel, activations: &ActivationMatrix) -> Result<Prediction> {
    if activations.k() != model.k {
        return Err(Error::DimensionMismatch {
            expected: model.k,
            found: activations.k(),
        });
    }
    let c = model.classes;
    let mut logits = vec![0.0f64; activations.rows() * c];
    logits
        .par_chunks_mut(c.max(1))
        .enumerate()
        .for_each(|(i, out)| model.logits_into(activations.row(i), out));
    let labels = logits.chunks(c.max(1)).map(argmax).collect();
    Ok(Prediction {
        labels,
        logits,
        classes: c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Contribution {
    pub concept: usize,
    pub value: f64,
}

/// The `top_n` largest per-concept contributions `w[j, class] * a_j` to the
/// logit of `class`, descending, ties to the smaller concept index.
pub fn explain(
    model: &CbmModel,
    activation_row: &[f32],
    class: usize,
    top_n: usize,
) -> Result<Vec<Contribution>> {
    if class >= model.classes {
        return Err(Error::InvalidArgument(format!(
            "class {class} >= {} classes",
            model.classes
        )));
    }
    if activation_row.len() != model.k {
        return Err(Error::DimensionMismatch {
            expected: model.k,
            found: activation_row.len(),
        });
    }
    let mut contributions: Vec<Contribution> = activation_row
        .iter()
        .enumerate()
        .map(|(j, &a)| Contribution {
            concept: j,
            value: model.weight(j, class) * f64::from(a),
        })
        .collect();
    contributions.sort_by(|x, y| y.value.total_cmp(&x.value).then(x.concept.cmp(&y.concept)));
    contributions.truncate(top_n.min(model.k));
    Ok(contributions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept_bank::{CentroidMode, ClusterMethod};

    fn bank(rows: &[&[f32]]) -> ConceptBank {
        let k = rows.len();
        ConceptBank::from_parts(
            EmbeddingMatrix::from_rows(rows).unwrap(),
            ClusterMethod::KMeans,
            CentroidMode::Mean,
            0,
            (0..k).map(Some).collect(),
            (0..k).collect(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn activation_identities() {
        let b = bank(&[&[1.0, 2.0, 2.0], &[0.0, 1.0, -1.0]]);
        let x = EmbeddingMatrix::from_rows(&[[1.0f32, 2.0, 2.0], [0.0, 1.0, 1.0]]).unwrap();
        let a = activations(&x, &b).unwrap();
        assert!((a.row(0)[0] - 1.0).abs() < 1e-7);
        assert_eq!(a.row(1)[1], 0.0);

        let doubled = bank(&[&[2.0, 4.0, 4.0], &[0.0, 1.0, -1.0]]);
        let a2 = activations(&x, &doubled).unwrap();
        for i in 0..2 {
            assert!((a2.row(i)[0] - a.row(i)[0] / 2.0).abs() <= f32::EPSILON * a.row(i)[0].abs());
        }
    }

    #[test]
    fn activation_dimension_mismatch() {
        let b = bank(&[&[1.0, 0.0]]);
        let x = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0, 0.0]]).unwrap();
        assert!(matches!(activations(&x, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn identity_weights_pick_the_concept_class() {
        let mut m = CbmModel::zeros(3, 3, false, 0.0);
        for j in 0..3 {
            m.weights[j * 3 + j] = 1.0;
        }
        let a = ActivationMatrix::new(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        assert_eq!(predict(&m, &a).unwrap().labels, vec![0, 1, 2]);
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let m = CbmModel::zeros(2, 4, false, 0.0);
        let a = ActivationMatrix::new(2, 2, vec![0.3, -1.0, 5.0, 2.0]).unwrap();
        assert_eq!(predict(&m, &a).unwrap().labels, vec![0, 0]);
        let wrong = ActivationMatrix::new(1, 3, vec![0.0; 3]).unwrap();
        assert!(predict(&m, &wrong).is_err());
    }

    #[test]
    fn explain_one_hot_and_full() {
        let mut m = CbmModel::zeros(4, 2, false, 0.0);
        m.weights = vec![0.5, -1.0, 2.0, 0.0, -0.3, 1.0, 0.5, 0.2];
        let top = explain(&m, &[0.0, 0.0, 3.0, 0.0], 0, 5).unwrap();
        let nonzero: Vec<_> = top.iter().filter(|c| c.value != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0].concept, 2);

        let a = [1.0f32, 2.0, -1.0, 0.5];
        let all = explain(&m, &a, 1, 4).unwrap();
        let mut logits = [0.0; 2];
        m.logits_into(&a, &mut logits);
        let total: f64 = all.iter().map(|c| c.value).sum();
        assert!((total - logits[1]).abs() < 1e-12);
        assert!(all.windows(2).all(|w| w[0].value >= w[1].value));
        assert!(explain(&m, &a, 2, 1).is_err());
    }

    #[test]
    fn explain_ties_prefer_smaller_index() {
        let mut m = CbmModel::zeros(3, 1, false, 0.0);
        m.weights = vec![1.0, 1.0, 1.0];
        let top = explain(&m, &[2.0, 2.0, 2.0], 0, 2).unwrap();
        assert_eq!(top.iter().map(|c| c.concept).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn model_round_trip() {
        let mut m = CbmModel::zeros(3, 2, true, 1e-4);
        m.weights = vec![0.25, -0.5, 1.0, 0.0, 2.0, -4.0];
        m.bias = Some(vec![0.5, -0.5]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.emb");
        m.save(&path, None).unwrap();
        let (back, ids) = CbmModel::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(ids[2], "concept_2");
    }
}
