//! Visual concepts: clusters of proposal embeddings and their centroids.
//!
//! A [`ConceptBank`] is built once from proposal embeddings and is immutable
//! afterwards; naming and removal return new banks. Centroids live in
//! whatever space the proposals were clustered in, so any projection (PCA,
//! normalization) applied before clustering must also be applied to the
//! image embeddings scored against the bank.

pub mod kmeans;
pub mod nmi;
pub mod ward;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor_io::{self, EmbeddingMatrix, LabelTable};

pub use kmeans::{kmeans_cluster, within_cluster_sse, ClusteringConfig, KMeansFit, DEFAULT_K};
pub use nmi::nmi;
pub use ward::{agglomerative_cluster, agglomerative_cluster_capped, DEFAULT_ROW_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    KMeans,
    Agglomerative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CentroidMode {
    Mean,
    /// Coordinate-wise median.
    Median,
}

impl FromStr for ClusterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(Self::KMeans),
            "agglomerative" | "ward" => Ok(Self::Agglomerative),
            other => Err(Error::InvalidArgument(format!("unknown clustering method {other:?}"))),
        }
    }
}

impl FromStr for CentroidMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            other => Err(Error::InvalidArgument(format!("unknown centroid mode {other:?}"))),
        }
    }
}

impl fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::KMeans => "kmeans",
            Self::Agglomerative => "agglomerative",
        })
    }
}

impl fmt::Display for CentroidMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::Median => "median",
        })
    }
}

/// How to turn proposal embeddings into a bank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BankSpec {
    pub method: ClusterMethod,
    pub clustering: ClusteringConfig,
    pub centroid_mode: CentroidMode,
    /// Row limit for agglomerative clustering.
    pub agglomerative_cap: usize,
}

impl Default for BankSpec {
    fn default() -> Self {
        Self {
            method: ClusterMethod::KMeans,
            clustering: ClusteringConfig::default(),
            centroid_mode: CentroidMode::Median,
            agglomerative_cap: DEFAULT_ROW_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptName {
    pub vocab_index: usize,
    pub name: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptBank {
    centroids: EmbeddingMatrix,
    method: ClusterMethod,
    centroid_mode: CentroidMode,
    seed: u64,
    /// Concept per proposal row; `None` once that concept has been removed.
    assignments: Vec<Option<usize>>,
    medoids: Vec<usize>,
    names: Option<Vec<ConceptName>>,
}

#[derive(Serialize, Deserialize)]
struct BankMeta {
    method: ClusterMethod,
    centroid_mode: CentroidMode,
    k: usize,
    seed: u64,
    assignments: Vec<Option<usize>>,
    medoids: Vec<usize>,
    #[serde(default)]
    names: Option<Vec<ConceptName>>,
}

impl ConceptBank {
    /// Assembles a bank, checking every structural invariant.
    pub fn from_parts(
        centroids: EmbeddingMatrix,
        method: ClusterMethod,
        centroid_mode: CentroidMode,
        seed: u64,
        assignments: Vec<Option<usize>>,
        medoids: Vec<usize>,
        names: Option<Vec<ConceptName>>,
    ) -> Result<Self> {
        let k = centroids.rows();
        if k == 0 {
            return Err(Error::EmptyBank);
        }
        let report = centroids.validate();
        if !report.is_empty() {
            return Err(Error::InvalidMatrix(report.to_string()));
        }
        for (j, c) in centroids.iter_rows().enumerate() {
            if norm(c) == 0.0 {
                return Err(Error::ZeroNorm(j));
            }
        }
        let mut sizes = vec![0usize; k];
        for a in assignments.iter().flatten() {
            if *a >= k {
                return Err(Error::InvalidArgument(format!("assignment {a} >= k = {k}")));
            }
            sizes[*a] += 1;
        }
        if let Some(j) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::EmptyCluster(j));
        }
        if medoids.len() != k {
            return Err(Error::InvalidArgument(format!("{} medoids for k = {k}", medoids.len())));
        }
        for (j, &m) in medoids.iter().enumerate() {
            if assignments.get(m).copied().flatten() != Some(j) {
                return Err(Error::InvalidArgument(format!(
                    "medoid row {m} is not a member of cluster {j}"
                )));
            }
        }
        if names.as_ref().is_some_and(|n| n.len() != k) {
            return Err(Error::InvalidArgument("one name per concept required".into()));
        }
        Ok(Self {
            centroids,
            method,
            centroid_mode,
            seed,
            assignments,
            medoids,
            names,
        })
    }

    /// Clusters the proposal embeddings and derives centroids and medoids.
    pub fn build(proposals: &EmbeddingMatrix, spec: &BankSpec) -> Result<Self> {
        let k = spec.clustering.k;
        let assignments = match spec.method {
            ClusterMethod::KMeans => kmeans_cluster(proposals, &spec.clustering)?.assignments,
            ClusterMethod::Agglomerative => {
                agglomerative_cluster_capped(proposals, k, spec.agglomerative_cap)?
            }
        };
        Self::from_assignments(proposals, assignments, k, spec)
    }

    pub fn from_assignments(
        proposals: &EmbeddingMatrix,
        assignments: Vec<usize>,
        k: usize,
        spec: &BankSpec,
    ) -> Result<Self> {
        let centroids = compute_centroids(proposals, &assignments, k, spec.centroid_mode)?;
        let medoids = medoids(proposals, &assignments, k)?;
        let dim = proposals.dim();
        let flat: Vec<f32> = centroids.iter().flatten().map(|&v| v as f32).collect();
        let mut matrix =
            EmbeddingMatrix::new(k, dim, flat, (0..k).map(|j| format!("concept_{j}")).collect())?;
        matrix.meta.encoder = proposals.meta.encoder.clone();
        matrix.meta.dataset = proposals.meta.dataset.clone();
        Self::from_parts(
            matrix,
            spec.method,
            spec.centroid_mode,
            spec.clustering.seed,
            assignments.into_iter().map(Some).collect(),
            medoids,
            None,
        )
    }

    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.dim()
    }

    pub fn centroids(&self) -> &EmbeddingMatrix {
        &self.centroids
    }

    pub fn centroid(&self, j: usize) -> &[f32] {
        self.centroids.row(j)
    }

    /// Stable identifier of concept `j`, preserved across removals.
    pub fn concept_id(&self, j: usize) -> &str {
        &self.centroids.row_ids()[j]
    }

    pub fn method(&self) -> ClusterMethod {
        self.method
    }

    pub fn centroid_mode(&self) -> CentroidMode {
        self.centroid_mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn assignments(&self) -> &[Option<usize>] {
        &self.assignments
    }

    pub fn medoids(&self) -> &[usize] {
        &self.medoids
    }

    pub fn names(&self) -> Option<&[ConceptName]> {
        self.names.as_deref()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = BankMeta {
            method: self.method,
            centroid_mode: self.centroid_mode,
            k: self.k(),
            seed: self.seed,
            assignments: self.assignments.clone(),
            medoids: self.medoids.clone(),
            names: self.names.clone(),
        };
        let mut matrix = self.centroids.clone();
        match serde_json::to_value(meta)? {
            Value::Object(map) => matrix.meta.extra.extend(map),
            _ => unreachable!("struct serializes to an object"),
        }
        tensor_io::write_embeddings(&matrix, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut matrix = tensor_io::read_embeddings(path)?;
        let extra = std::mem::take(&mut matrix.meta.extra);
        let meta: BankMeta = serde_json::from_value(Value::Object(extra.clone()))?;
        if meta.k != matrix.rows() {
            return Err(Error::SidecarMismatch(format!(
                "sidecar k = {} but {} centroid rows",
                meta.k,
                matrix.rows()
            )));
        }
        matrix.meta.extra = extra
            .into_iter()
            .filter(|(key, _)| {
                !matches!(
                    key.as_str(),
                    "method" | "centroid_mode" | "k" | "seed" | "assignments" | "medoids" | "names"
                )
            })
            .collect();
        Self::from_parts(
            matrix,
            meta.method,
            meta.centroid_mode,
            meta.seed,
            meta.assignments,
            meta.medoids,
            meta.names,
        )
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

fn check_assignments(rows: usize, assignments: &[usize], k: usize) -> Result<Vec<usize>> {
    if assignments.len() != rows {
        return Err(Error::DimensionMismatch {
            expected: rows,
            found: assignments.len(),
        });
    }
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        if a >= k {
            return Err(Error::InvalidArgument(format!("assignment {a} >= k = {k}")));
        }
        sizes[a] += 1;
    }
    if let Some(j) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyCluster(j));
    }
    Ok(sizes)
}

/// One centroid per cluster, mean or coordinate-wise median (even counts
/// average the two middle values).
pub fn compute_centroids(
    matrix: &EmbeddingMatrix,
    assignments: &[usize],
    k: usize,
    mode: CentroidMode,
) -> Result<Vec<Vec<f64>>> {
    let sizes = check_assignments(matrix.rows(), assignments, k)?;
    let dim = matrix.dim();
    match mode {
        CentroidMode::Mean => {
            let mut sums = vec![vec![0.0f64; dim]; k];
            for (row, &a) in matrix.iter_rows().zip(assignments) {
                sums[a].iter_mut().zip(row).for_each(|(s, &x)| *s += f64::from(x));
            }
            for (s, &n) in sums.iter_mut().zip(&sizes) {
                s.iter_mut().for_each(|v| *v /= n as f64);
            }
            Ok(sums)
        }
        CentroidMode::Median => {
            let members = members_by_cluster(assignments, k);
            Ok(members
                .par_iter()
                .map(|rows| {
                    let mut column = Vec::with_capacity(rows.len());
                    (0..dim)
                        .map(|d| {
                            column.clear();
                            column.extend(rows.iter().map(|&r| f64::from(matrix.row(r)[d])));
                            column.sort_by(f64::total_cmp);
                            let mid = column.len() / 2;
                            if column.len() % 2 == 1 {
                                column[mid]
                            } else {
                                (column[mid - 1] + column[mid]) / 2.0
                            }
                        })
                        .collect()
                })
                .collect())
        }
    }
}

fn members_by_cluster(assignments: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); k];
    for (row, &a) in assignments.iter().enumerate() {
        members[a].push(row);
    }
    members
}

fn medoid_among(matrix: &EmbeddingMatrix, rows: &[usize]) -> usize {
    let dist = |a: usize, b: usize| -> f64 {
        matrix
            .row(a)
            .iter()
            .zip(matrix.row(b))
            .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut totals = vec![0.0f64; rows.len()];
    for p in 0..rows.len() {
        for q in p + 1..rows.len() {
            let d = dist(rows[p], rows[q]);
            totals[p] += d;
            totals[q] += d;
        }
    }
    // rows are ascending, so the first minimum is the smallest row index
    let mut best = 0;
    for (p, &t) in totals.iter().enumerate() {
        if t < totals[best] {
            best = p;
        }
    }
    rows[best]
}

/// Member of cluster `j` with the smallest summed Euclidean distance to the
/// other members; ties go to the smaller row index.
pub fn medoid_of_cluster(matrix: &EmbeddingMatrix, assignments: &[usize], j: usize) -> Result<usize> {
    if assignments.len() != matrix.rows() {
        return Err(Error::DimensionMismatch {
            expected: matrix.rows(),
            found: assignments.len(),
        });
    }
    let rows: Vec<usize> = (0..assignments.len()).filter(|&r| assignments[r] == j).collect();
    if rows.is_empty() {
        return Err(Error::EmptyCluster(j));
    }
    Ok(medoid_among(matrix, &rows))
}

pub fn medoids(matrix: &EmbeddingMatrix, assignments: &[usize], k: usize) -> Result<Vec<usize>> {
    check_assignments(matrix.rows(), assignments, k)?;
    Ok(members_by_cluster(assignments, k)
        .par_iter()
        .map(|rows| medoid_among(matrix, rows))
        .collect())
}

/// Names each concept after its most cosine-similar vocabulary row, ties to
/// the smaller vocabulary index.
pub fn name_concepts(
    bank: &ConceptBank,
    vocab_embeddings: &EmbeddingMatrix,
    vocab: &LabelTable,
) -> Result<ConceptBank> {
    if vocab_embeddings.dim() != bank.dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.dim(),
            found: vocab_embeddings.dim(),
        });
    }
    if vocab.len() != vocab_embeddings.rows() {
        return Err(Error::DimensionMismatch {
            expected: vocab_embeddings.rows(),
            found: vocab.len(),
        });
    }
    if vocab_embeddings.rows() == 0 {
        return Err(Error::EmptyInput("empty vocabulary"));
    }
    let vocab_norms: Vec<f64> = vocab_embeddings.iter_rows().map(norm).collect();
    if let Some(r) = vocab_norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroNorm(r));
    }
    let names = (0..bank.k())
        .into_par_iter()
        .map(|j| {
            let c = bank.centroid(j);
            let cn = norm(c);
            if cn == 0.0 {
                return Err(Error::ZeroNorm(j));
            }
            let mut best = (0usize, f64::NEG_INFINITY);
            for (t, (row, &tn)) in vocab_embeddings.iter_rows().zip(&vocab_norms).enumerate() {
                let sim = dot(c, row) / (cn * tn);
                if sim > best.1 {
                    best = (t, sim);
                }
            }
            Ok(ConceptName {
                vocab_index: best.0,
                name: vocab.name(best.0).expect("checked length").to_string(),
                similarity: best.1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut named = bank.clone();
    named.names = Some(names);
    Ok(named)
}

/// Result of [`remove_concepts`].
#[derive(Debug, Clone)]
pub struct Removal {
    pub bank: ConceptBank,
    /// Old indices that were dropped, ascending.
    pub removed: Vec<usize>,
    /// Old index to new index; `None` for dropped concepts.
    pub mapping: Vec<Option<usize>>,
}

/// Drops every concept whose cosine similarity to `query` exceeds `tau`
/// and re-indexes the survivors densely.
pub fn remove_concepts(bank: &ConceptBank, query: &[f32], tau: f64) -> Result<Removal> {
    if query.len() != bank.dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.dim(),
            found: query.len(),
        });
    }
    if !(-1.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau {tau} outside [-1, 1]")));
    }
    let qn = norm(query);
    if qn == 0.0 {
        return Err(Error::InvalidArgument("zero-norm removal query".into()));
    }
    let mut removed = Vec::new();
    let mut mapping = Vec::with_capacity(bank.k());
    let mut kept = Vec::new();
    for j in 0..bank.k() {
        let c = bank.centroid(j);
        // rounding can push a self-similarity past 1
        let sim = (dot(c, query) / (norm(c) * qn)).clamp(-1.0, 1.0);
        if sim > tau {
            removed.push(j);
            mapping.push(None);
        } else {
            mapping.push(Some(kept.len()));
            kept.push(j);
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyBank);
    }
    let centroids = bank.centroids.select_rows(&kept)?;
    let assignments = bank
        .assignments
        .iter()
        .map(|a| a.and_then(|old| mapping[old]))
        .collect();
    let medoids = kept.iter().map(|&j| bank.medoids[j]).collect();
    let names = bank
        .names
        .as_ref()
        .map(|n| kept.iter().map(|&j| n[j].clone()).collect());
    let reduced = ConceptBank::from_parts(
        centroids,
        bank.method,
        bank.centroid_mode,
        bank.seed,
        assignments,
        medoids,
        names,
    )?;
    Ok(Removal {
        bank: reduced,
        removed,
        mapping,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f32]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows).unwrap()
    }

    fn bank_of(centroids: &[&[f32]]) -> ConceptBank {
        let k = centroids.len();
        ConceptBank::from_parts(
            mat(centroids),
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
    fn mean_centroid() {
        let m = mat(&[&[0.0, 0.0], &[2.0, 2.0]]);
        assert_eq!(
            compute_centroids(&m, &[0, 0], 1, CentroidMode::Mean).unwrap(),
            vec![vec![1.0, 1.0]]
        );
    }

    #[test]
    fn median_centroid_is_coordinatewise() {
        let m = mat(&[&[0.0, 0.0], &[0.0, 10.0], &[1.0, 1.0]]);
        assert_eq!(
            compute_centroids(&m, &[0, 0, 0], 1, CentroidMode::Median).unwrap(),
            vec![vec![0.0, 1.0]]
        );
        let even = mat(&[&[0.0], &[4.0], &[1.0], &[9.0]]);
        assert_eq!(
            compute_centroids(&even, &[0, 0, 0, 0], 1, CentroidMode::Median).unwrap(),
            vec![vec![2.5]]
        );
    }

    #[test]
    fn singleton_centroid_both_modes() {
        let m = mat(&[&[3.0, -1.5], &[7.0, 7.0]]);
        for mode in [CentroidMode::Mean, CentroidMode::Median] {
            let c = compute_centroids(&m, &[1, 0], 2, mode).unwrap();
            assert_eq!(c[1], vec![3.0, -1.5]);
        }
    }

    #[test]
    fn empty_cluster_is_an_error() {
        let m = mat(&[&[0.0], &[1.0]]);
        assert!(matches!(
            compute_centroids(&m, &[0, 0], 2, CentroidMode::Mean),
            Err(Error::EmptyCluster(1))
        ));
    }

    #[test]
    fn medoid_cases() {
        let m = mat(&[&[0.0], &[1.0], &[10.0]]);
        // distance sums: 11, 10, 19
        assert_eq!(medoid_of_cluster(&m, &[0, 0, 0], 0).unwrap(), 1);
        assert_eq!(medoid_of_cluster(&m, &[0, 1, 0], 1).unwrap(), 1);
        let pair = mat(&[&[5.0], &[-1.0], &[1.0]]);
        assert_eq!(medoid_of_cluster(&pair, &[1, 0, 0], 0).unwrap(), 1);
        assert!(matches!(medoid_of_cluster(&pair, &[1, 0, 0], 2), Err(Error::EmptyCluster(2))));
    }

    #[test]
    fn naming_picks_self_and_breaks_ties_low() {
        let bank = bank_of(&[&[1.0, 2.0, 0.0], &[0.0, 0.0, 3.0]]);
        let vocab = mat(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[1.0, 2.0, 0.0]]);
        let labels = LabelTable::new(vec!["x".into(), "y".into(), "self".into()]).unwrap();
        let named = name_concepts(&bank, &vocab, &labels).unwrap();
        let names = named.names().unwrap();
        assert_eq!(names[0].name, "self");
        assert!((names[0].similarity - 1.0).abs() < 1e-12);
        // orthogonal to every vocabulary row
        assert_eq!(names[1].vocab_index, 0);
        assert_eq!(names[1].similarity, 0.0);
    }

    #[test]
    fn naming_rejects_bad_vocab() {
        let bank = bank_of(&[&[1.0, 0.0]]);
        let labels = LabelTable::new(vec!["a".into()]).unwrap();
        assert!(name_concepts(&bank, &mat(&[&[1.0, 0.0, 0.0]]), &labels).is_err());
        assert!(matches!(
            name_concepts(&bank, &mat(&[&[0.0, 0.0]]), &labels),
            Err(Error::ZeroNorm(0))
        ));
    }

    #[test]
    fn removal_by_own_centroid() {
        let bank = bank_of(&[&[1.0, 0.0], &[0.0, 1.0], &[2.0, 0.0], &[1.0, 1.0]]);
        let r = remove_concepts(&bank, &[1.0, 0.0], 0.999).unwrap();
        assert_eq!(r.removed, vec![0, 2]);
        assert_eq!(r.mapping, vec![None, Some(0), None, Some(1)]);
        assert_eq!(r.bank.k(), 2);
        assert_eq!(r.bank.concept_id(1), "3");
        assert_eq!(r.bank.assignments(), &[None, Some(0), None, Some(1)]);

        let none = remove_concepts(&bank, &[1.0, 0.0], 1.0).unwrap();
        assert!(none.removed.is_empty());
        assert_eq!(none.bank, bank);
    }

    #[test]
    fn removal_guards() {
        let bank = bank_of(&[&[1.0, 0.0]]);
        assert!(matches!(remove_concepts(&bank, &[1.0, 0.0], 0.5), Err(Error::EmptyBank)));
        assert!(remove_concepts(&bank, &[1.0, 0.0], 1.5).is_err());
        assert!(remove_concepts(&bank, &[1.0], 0.5).is_err());
    }

    #[test]
    fn zero_norm_centroid_rejected() {
        let err = ConceptBank::from_parts(
            mat(&[&[0.0, 0.0]]),
            ClusterMethod::KMeans,
            CentroidMode::Mean,
            0,
            vec![Some(0)],
            vec![0],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ZeroNorm(0)));
    }

    #[test]
    fn save_and_load() {
        let proposals = mat(&[&[0.0, 1.0], &[0.2, 1.1], &[5.0, 5.0], &[5.5, 4.5], &[5.2, 5.1]]);
        let spec = BankSpec {
            clustering: ClusteringConfig::with_k(2, 4),
            ..BankSpec::default()
        };
        let bank = ConceptBank::build(&proposals, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.emb");
        bank.save(&path).unwrap();
        assert_eq!(ConceptBank::load(&path).unwrap(), bank);
    }
}
