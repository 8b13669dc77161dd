//! End-to-end composition: proposals to concept bank to trained classifier.

use crate::cbm::{self, ActivationMatrix, CbmModel, TrainConfig};
use crate::concept_bank::{BankSpec, ConceptBank};
use crate::error::{Error, Result};
use crate::metrics;
use crate::preprocess::{self, AreaFilter, PcaModel, SubsetSpec};
use crate::tensor_io::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    /// Per-class image subsampling for concept generation; `None` uses all.
    pub subset: Option<SubsetSpec>,
    pub area: AreaFilter,
    pub pca_components: Option<usize>,
    /// L2-normalize proposal and image embeddings before anything else.
    pub normalize: bool,
    pub bank: BankSpec,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            subset: None,
            area: AreaFilter::UNBOUNDED,
            pca_components: None,
            normalize: false,
            bank: BankSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

/// The embedding space a bank lives in: optional normalization, then PCA.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Projection {
    pub normalize: bool,
    pub pca: Option<PcaModel>,
}

impl Projection {
    pub fn apply(&self, matrix: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        let m = if self.normalize {
            matrix.l2_normalized()
        } else {
            matrix.clone()
        };
        match &self.pca {
            Some(model) => preprocess::pca_transform(model, &m),
            None => Ok(m),
        }
    }
}

/// Subsets and filters the proposals, projects them and clusters them.
pub fn fit_bank(proposals: &EmbeddingMatrix, cfg: &PipelineConfig) -> Result<(ConceptBank, Projection)> {
    let images = match cfg.subset {
        Some(spec) => {
            let records = proposals.meta.records.as_deref().ok_or_else(|| {
                Error::InvalidArgument("subsampling needs proposal records".into())
            })?;
            Some(preprocess::subsample_per_class(&preprocess::images_of(records), spec)?)
        }
        None => None,
    };
    let selected = if images.is_some() || cfg.area != AreaFilter::UNBOUNDED {
        preprocess::select_proposals(proposals, images.as_ref(), cfg.area)?
    } else {
        proposals.clone()
    };
    let mut projection = Projection {
        normalize: cfg.normalize,
        pca: None,
    };
    let space = projection.apply(&selected)?;
    let space = match cfg.pca_components {
        Some(n) => {
            let model = preprocess::pca_fit(&space, n)?;
            let reduced = preprocess::pca_transform(&model, &space)?;
            projection.pca = Some(model);
            reduced
        }
        None => space,
    };
    let bank = ConceptBank::build(&space, &cfg.bank)?;
    Ok((bank, projection))
}

pub fn class_labels(matrix: &EmbeddingMatrix) -> Result<&[usize]> {
    matrix
        .meta
        .class_labels
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("embedding set carries no class labels".into()))
}

pub fn bank_activations(
    images: &EmbeddingMatrix,
    bank: &ConceptBank,
    projection: &Projection,
) -> Result<ActivationMatrix> {
    cbm::activations(&projection.apply(images)?, bank)
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub bank: ConceptBank,
    pub projection: Projection,
    pub model: CbmModel,
    pub test_activations: ActivationMatrix,
    pub test_predictions: Vec<usize>,
    pub test_accuracy: f64,
}

pub fn run(
    proposals: &EmbeddingMatrix,
    train: &EmbeddingMatrix,
    test: &EmbeddingMatrix,
    cfg: &PipelineConfig,
) -> Result<PipelineRun> {
    let (bank, projection) = fit_bank(proposals, cfg)?;
    train_on_bank(bank, projection, train, test, &cfg.train)
}

/// Trains and evaluates a classifier on an existing bank.
pub fn train_on_bank(
    bank: ConceptBank,
    projection: Projection,
    train: &EmbeddingMatrix,
    test: &EmbeddingMatrix,
    cfg: &TrainConfig,
) -> Result<PipelineRun> {
    let train_act = bank_activations(train, &bank, &projection)?;
    let model = cbm::train(&train_act, class_labels(train)?, cfg)?;
    let test_activations = bank_activations(test, &bank, &projection)?;
    let test_predictions = cbm::predict(&model, &test_activations)?.labels;
    let test_accuracy = metrics::top1_accuracy(&test_predictions, class_labels(test)?)?;
    Ok(PipelineRun {
        bank,
        projection,
        model,
        test_activations,
        test_predictions,
        test_accuracy,
    })
}

/// Linear-probe test accuracy on the same split.
pub fn probe_accuracy(train: &EmbeddingMatrix, test: &EmbeddingMatrix, cfg: &TrainConfig) -> Result<f64> {
    let model = cbm::linear_probe(train, class_labels(train)?, cfg)?;
    let predictions = cbm::predict(&model, &ActivationMatrix::from_embeddings(test)?)?.labels;
    metrics::top1_accuracy(&predictions, class_labels(test)?)
}
