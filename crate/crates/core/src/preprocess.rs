//! Concept-generation subset selection, proposal area filtering and PCA.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor_io::{self, EmbeddingMatrix, ProposalRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubsetSpec {
    pub n_per_class: usize,
    pub seed: u64,
}

impl SubsetSpec {
    pub fn new(n_per_class: usize, seed: u64) -> Result<Self> {
        if n_per_class == 0 {
            return Err(Error::InvalidArgument("n_per_class must be >= 1".into()));
        }
        Ok(Self { n_per_class, seed })
    }
}

/// A labelled training image, the unit of per-class subsampling.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ImageEntry {
    pub image_id: String,
    pub class_label: usize,
}

/// Distinct `(source_image_id, class_label)` pairs referenced by proposals.
pub fn images_of(records: &[ProposalRecord]) -> Vec<ImageEntry> {
    records
        .iter()
        .map(|r| ImageEntry {
            image_id: r.source_image_id.clone(),
            class_label: r.class_label,
        })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Selects `min(n, class size)` images per class.
///
/// Classes are visited in ascending index order and each class's ids are
/// sorted before a partial Fisher-Yates shuffle, so the result depends only on
/// the set of entries and the seed, not on input order.
pub fn subsample_per_class(images: &[ImageEntry], spec: SubsetSpec) -> Result<BTreeSet<String>> {
    if images.is_empty() {
        return Err(Error::EmptyInput("no images to subsample"));
    }
    if spec.n_per_class == 0 {
        return Err(Error::InvalidArgument("n_per_class must be >= 1".into()));
    }
    let mut by_class: BTreeMap<usize, BTreeSet<&str>> = BTreeMap::new();
    for img in images {
        by_class
            .entry(img.class_label)
            .or_default()
            .insert(img.image_id.as_str());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut selected = BTreeSet::new();
    for ids in by_class.values() {
        let mut ids: Vec<&str> = ids.iter().copied().collect();
        let take = spec.n_per_class.min(ids.len());
        for i in 0..take {
            let j = rng.random_range(i..ids.len());
            ids.swap(i, j);
        }
        selected.extend(ids[..take].iter().map(|s| s.to_string()));
    }
    Ok(selected)
}

/// Inclusive pixel-area window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AreaFilter {
    pub a_min: u64,
    pub a_max: u64,
}

impl AreaFilter {
    pub const UNBOUNDED: AreaFilter = AreaFilter {
        a_min: 0,
        a_max: u64::MAX,
    };

    pub fn new(a_min: u64, a_max: u64) -> Result<Self> {
        if a_min > a_max {
            return Err(Error::InvalidArgument(format!(
                "a_min {a_min} > a_max {a_max}"
            )));
        }
        Ok(Self { a_min, a_max })
    }

    /// Drops everything of `threshold` pixels or fewer.
    pub fn greater_than(threshold: u64) -> Self {
        Self {
            a_min: threshold.saturating_add(1),
            a_max: u64::MAX,
        }
    }

    /// Drops everything of `threshold` pixels or more.
    pub fn less_than(threshold: u64) -> Self {
        Self {
            a_min: 0,
            a_max: threshold.saturating_sub(1),
        }
    }

    pub fn contains(&self, area: u64) -> bool {
        (self.a_min..=self.a_max).contains(&area)
    }
}

pub fn filter_by_area(records: &[ProposalRecord], filter: AreaFilter) -> Vec<ProposalRecord> {
    records
        .iter()
        .filter(|r| filter.contains(r.area))
        .cloned()
        .collect()
}

/// Rows of `proposals` whose record survives both the image subset and the
/// area filter, in row order.
pub fn select_proposals(
    proposals: &EmbeddingMatrix,
    images: Option<&BTreeSet<String>>,
    filter: AreaFilter,
) -> Result<EmbeddingMatrix> {
    let records = proposals.meta.records.as_deref().ok_or_else(|| {
        Error::InvalidArgument("proposal matrix carries no proposal records".into())
    })?;
    let mut rows: Vec<usize> = filter_by_area(records, filter)
        .into_iter()
        .filter(|r| images.is_none_or(|set| set.contains(&r.source_image_id)))
        .map(|r| r.row_index)
        .collect();
    rows.sort_unstable();
    rows.dedup();
    proposals.select_rows(&rows)
}

/// Principal axes of a centred data set.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `n_components x dim`, orthonormal rows.
    pub components: Vec<Vec<f64>>,
    /// Non-increasing, non-negative.
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    fn project(&self, row: &[f32]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(row.iter().zip(&self.mean))
                    .map(|(w, (&x, m))| w * (f64::from(x) - m))
                    .sum()
            })
            .collect()
    }

    /// Writes `<prefix>.components.emb` and `<prefix>.mean.emb` with sidecars.
    pub fn save(&self, prefix: impl AsRef<Path>) -> Result<()> {
        let (comp_path, mean_path) = pca_paths(prefix.as_ref());
        let n = self.n_components();
        let flat: Vec<f32> = self
            .components
            .iter()
            .flat_map(|c| c.iter().map(|&v| v as f32))
            .collect();
        let mut comps = EmbeddingMatrix::new(
            n,
            self.dim(),
            flat,
            (0..n).map(|i| format!("pc_{i}")).collect(),
        )?;
        comps.meta.extra.insert(
            "explained_variance".into(),
            Value::from(self.explained_variance.clone()),
        );
        let mean = EmbeddingMatrix::new(
            1,
            self.dim(),
            self.mean.iter().map(|&v| v as f32).collect(),
            vec!["mean".into()],
        )?;
        tensor_io::write_embeddings(&comps, comp_path)?;
        tensor_io::write_embeddings(&mean, mean_path)
    }

    pub fn load(prefix: impl AsRef<Path>) -> Result<Self> {
        let (comp_path, mean_path) = pca_paths(prefix.as_ref());
        let comps = tensor_io::read_embeddings(comp_path)?;
        let mean = tensor_io::read_embeddings(mean_path)?;
        if mean.rows() != 1 || mean.dim() != comps.dim() {
            return Err(Error::SidecarMismatch(
                "PCA mean must be a single row matching the component width".into(),
            ));
        }
        let explained_variance: Vec<f64> = comps
            .meta
            .extra
            .get("explained_variance")
            .cloned()
            .map(serde_json::from_value)
            .transpose()?
            .ok_or_else(|| Error::SidecarMismatch("missing explained_variance".into()))?;
        if explained_variance.len() != comps.rows() {
            return Err(Error::SidecarMismatch(
                "explained_variance length differs from component count".into(),
            ));
        }
        Ok(Self {
            mean: mean.row(0).iter().map(|&v| f64::from(v)).collect(),
            components: comps
                .iter_rows()
                .map(|r| r.iter().map(|&v| f64::from(v)).collect())
                .collect(),
            explained_variance,
        })
    }
}

/// `(<prefix>.components.emb, <prefix>.mean.emb)`.
pub fn pca_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let with = |suffix: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    (with(".components.emb"), with(".mean.emb"))
}

/// Exact PCA from the eigendecomposition of the sample covariance
/// (denominator `rows - 1`). Each component is signed so that its
/// largest-magnitude coordinate is positive.
pub fn pca_fit(matrix: &EmbeddingMatrix, n_components: usize) -> Result<PcaModel> {
    let (rows, dim) = (matrix.rows(), matrix.dim());
    if rows < 2 {
        return Err(Error::TooFewRows { rows, needed: 2 });
    }
    if n_components == 0 || n_components > rows.min(dim) {
        return Err(Error::InvalidArgument(format!(
            "n_components {n_components} must lie in 1..={}",
            rows.min(dim)
        )));
    }

    let mut mean = vec![0.0f64; dim];
    for row in matrix.iter_rows() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += f64::from(x);
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    let mut centred = vec![0.0f64; dim];
    for row in matrix.iter_rows() {
        for (c, (&x, m)) in centred.iter_mut().zip(row.iter().zip(&mean)) {
            *c = f64::from(x) - m;
        }
        for a in 0..dim {
            let ca = centred[a];
            if ca == 0.0 {
                continue;
            }
            for b in a..dim {
                cov[(a, b)] += ca * centred[b];
            }
        }
    }
    let denom = (rows - 1) as f64;
    for a in 0..dim {
        for b in a..dim {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    // stable sort keeps eigensolver order among equal eigenvalues
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut components = Vec::with_capacity(n_components);
    let mut explained_variance = Vec::with_capacity(n_components);
    for &idx in order.iter().take(n_components) {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let pivot = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &x)| {
                if x.abs() > best.1.abs() {
                    (i, x)
                } else {
                    best
                }
            })
            .1;
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

pub fn pca_transform(model: &PcaModel, matrix: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    if matrix.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: matrix.dim(),
        });
    }
    let n = model.n_components();
    let mut data = Vec::with_capacity(matrix.rows() * n);
    for row in matrix.iter_rows() {
        data.extend(model.project(row).into_iter().map(|v| v as f32));
    }
    let mut out = EmbeddingMatrix::new(matrix.rows(), n, data, matrix.row_ids().to_vec())?;
    out.meta = matrix.meta.clone();
    Ok(out)
}
