//! EMB1 embedding files and their JSON sidecars.
//!
//! Layout, all little-endian:
//!
//! | bytes  | content                      |
//! |--------|------------------------------|
//! | 0..4   | ASCII `EMB1`                 |
//! | 4..8   | `u32` version (= 1)          |
//! | 8..16  | `u64` rows                   |
//! | 16..24 | `u64` dim                    |
//! | 24..   | `rows * dim` `f32`, row-major |
//!
//! Metadata lives next to the tensor in `<file>.meta.json`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"EMB1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;
pub const SIDECAR_SUFFIX: &str = ".meta.json";

/// Provenance of one concept proposal (a cropped region of a source image).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub proposal_id: String,
    pub source_image_id: String,
    pub class_label: usize,
    /// `[x, y, w, h]` in pixels.
    pub bbox: [u32; 4],
    pub area: u64,
    #[serde(default = "unset_row")]
    pub row_index: usize,
}

fn unset_row() -> usize {
    usize::MAX
}

impl ProposalRecord {
    pub fn box_area(&self) -> u64 {
        u64::from(self.bbox[2]) * u64::from(self.bbox[3])
    }
}

/// Class index to class name, indices contiguous from zero.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelTable {
    names: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelEntry {
    pub index: usize,
    pub name: String,
}

impl LabelTable {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(names.len());
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate label name {name:?}"
                )));
            }
        }
        Ok(Self { names })
    }

    pub fn from_entries(mut entries: Vec<LabelEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.index);
        for (expected, entry) in entries.iter().enumerate() {
            if entry.index != expected {
                return Err(Error::InvalidArgument(format!(
                    "label indices not contiguous: expected {expected}, found {}",
                    entry.index
                )));
            }
        }
        Self::new(entries.into_iter().map(|e| e.name).collect())
    }

    pub fn entries(&self) -> Vec<LabelEntry> {
        self.names
            .iter()
            .enumerate()
            .map(|(index, name)| LabelEntry {
                index,
                name: name.clone(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Descriptive metadata carried in the sidecar alongside the tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata {
    pub encoder: String,
    pub dataset: String,
    pub records: Option<Vec<ProposalRecord>>,
    pub labels: Option<LabelTable>,
    /// Per-row class index, for image embedding sets.
    pub class_labels: Option<Vec<usize>>,
    /// Free-form keys owned by whoever wrote the file (bank, model, PCA).
    pub extra: Map<String, Value>,
}

/// Dense row-major `rows x dim` matrix of `f32` embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
    row_ids: Vec<String>,
    pub meta: Metadata,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>, row_ids: Vec<String>) -> Result<Self> {
        let expected = rows
            .checked_mul(dim)
            .ok_or(Error::LengthOverflow { rows: rows as u64, dim: dim as u64 })?;
        if data.len() != expected {
            return Err(Error::InvalidMatrix(format!(
                "data length {} != {rows} x {dim}",
                data.len()
            )));
        }
        if row_ids.len() != rows {
            return Err(Error::InvalidMatrix(format!(
                "{} row ids for {rows} rows",
                row_ids.len()
            )));
        }
        Ok(Self {
            rows,
            dim,
            data,
            row_ids,
            meta: Metadata::default(),
        })
    }

    /// Matrix with row ids `"0"`, `"1"`, ...
    pub fn from_data(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(rows, dim, data, default_ids(rows))
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::InvalidMatrix(format!(
                    "row {i} has length {}, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::from_data(rows.len(), dim, data)
    }

    pub fn with_meta(mut self, meta: Metadata) -> Self {
        self.meta = meta;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        // chunks_exact panics on a zero chunk size
        (0..self.rows).map(move |i| self.row(i))
    }

    /// New matrix holding the given rows in the given order. Encoder, dataset
    /// and labels carry over; per-row metadata is subset and records are
    /// re-pointed at their new rows.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.rows {
                return Err(Error::InvalidArgument(format!(
                    "row {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
            ids.push(self.row_ids[i].clone());
        }
        let mut out = Self::new(indices.len(), self.dim, data, ids)?;
        out.meta.encoder = self.meta.encoder.clone();
        out.meta.dataset = self.meta.dataset.clone();
        out.meta.labels = self.meta.labels.clone();
        out.meta.class_labels = self
            .meta
            .class_labels
            .as_ref()
            .map(|cl| indices.iter().map(|&i| cl[i]).collect());
        out.meta.records = self.meta.records.as_ref().map(|records| {
            let by_row: BTreeMap<usize, &ProposalRecord> =
                records.iter().map(|r| (r.row_index, r)).collect();
            indices
                .iter()
                .enumerate()
                .filter_map(|(new, old)| {
                    by_row.get(old).map(|r| ProposalRecord {
                        row_index: new,
                        ..(*r).clone()
                    })
                })
                .collect()
        });
        Ok(out)
    }

    /// Copy with every non-zero row scaled to unit L2 norm.
    pub fn l2_normalized(&self) -> Self {
        let mut out = self.clone();
        if self.dim == 0 {
            return out;
        }
        for row in out.data.chunks_exact_mut(self.dim) {
            let norm = row.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v = (f64::from(*v) / norm) as f32;
                }
            }
        }
        out
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }
}

pub(crate) fn default_ids(rows: usize) -> Vec<String> {
    (0..rows).map(|i| i.to_string()).collect()
}

/// Findings from [`validate`]; empty iff the matrix is usable downstream.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    /// `(row, col)` of every NaN or infinite value.
    pub non_finite: Vec<(usize, usize)>,
    pub duplicate_ids: Vec<String>,
    pub shape: Vec<String>,
    pub records: Vec<String>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.non_finite.is_empty()
            && self.duplicate_ids.is_empty()
            && self.shape.is_empty()
            && self.records.is_empty()
    }

    pub fn findings(&self) -> usize {
        self.non_finite.len() + self.duplicate_ids.len() + self.shape.len() + self.records.len()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "no findings");
        }
        let mut parts = Vec::new();
        if let Some(&(r, c)) = self.non_finite.first() {
            parts.push(format!(
                "{} non-finite values (first at ({r}, {c}))",
                self.non_finite.len()
            ));
        }
        if !self.duplicate_ids.is_empty() {
            parts.push(format!("duplicate row ids {:?}", self.duplicate_ids));
        }
        parts.extend(self.shape.iter().cloned());
        parts.extend(self.records.iter().cloned());
        write!(f, "{}", parts.join("; "))
    }
}

pub fn validate(matrix: &EmbeddingMatrix) -> ValidationReport {
    let mut report = ValidationReport::default();
    let expected = matrix.rows.checked_mul(matrix.dim);
    if expected != Some(matrix.data.len()) {
        report.shape.push(format!(
            "data length {} != {} x {}",
            matrix.data.len(),
            matrix.rows,
            matrix.dim
        ));
    }
    if matrix.row_ids.len() != matrix.rows {
        report.shape.push(format!(
            "{} row ids for {} rows",
            matrix.row_ids.len(),
            matrix.rows
        ));
    }
    for (r, row) in matrix.data.chunks(matrix.dim.max(1)).enumerate() {
        for (c, v) in row.iter().enumerate() {
            if !v.is_finite() {
                report.non_finite.push((r, c));
            }
        }
    }
    let mut seen = HashSet::with_capacity(matrix.row_ids.len());
    let mut dups = Vec::new();
    for id in &matrix.row_ids {
        if !seen.insert(id.as_str()) && !dups.contains(id) {
            dups.push(id.clone());
        }
    }
    report.duplicate_ids = dups;

    if let Some(cl) = &matrix.meta.class_labels {
        if cl.len() != matrix.rows {
            report
                .shape
                .push(format!("{} class labels for {} rows", cl.len(), matrix.rows));
        }
        if let Some(labels) = &matrix.meta.labels {
            if let Some(&bad) = cl.iter().find(|&&c| c >= labels.len()) {
                report.shape.push(format!(
                    "class label {bad} outside label table of {}",
                    labels.len()
                ));
            }
        }
    }
    if let Some(records) = &matrix.meta.records {
        for r in records {
            if r.row_index >= matrix.rows {
                report.records.push(format!(
                    "record {} points at row {} of {}",
                    r.proposal_id, r.row_index, matrix.rows
                ));
            }
            if r.area == 0 {
                report
                    .records
                    .push(format!("record {} has zero area", r.proposal_id));
            } else if r.area > r.box_area() {
                report.records.push(format!(
                    "record {} area {} exceeds its box {}",
                    r.proposal_id,
                    r.area,
                    r.box_area()
                ));
            }
        }
    }
    report
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    #[serde(default)]
    encoder: String,
    #[serde(default)]
    dataset: String,
    row_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    records: Option<Vec<ProposalRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<LabelEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_labels: Option<Vec<usize>>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(SIDECAR_SUFFIX);
    PathBuf::from(s)
}

/// Encodes the tensor part only.
pub fn encode(matrix: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let (rows, dim) = (matrix.rows as u64, matrix.dim as u64);
    let payload = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or(Error::LengthOverflow { rows, dim })?;
    let mut buf = Vec::with_capacity(payload);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    for v in &matrix.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

/// Decodes the tensor part; row ids default to the row numbers.
pub fn decode(bytes: &[u8], path: &Path) -> Result<EmbeddingMatrix> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let dim = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .ok_or(Error::LengthOverflow { rows, dim })?;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::Truncated { expected, found });
    }
    if found > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            found - expected
        )));
    }
    let (rows, dim) = (rows as usize, dim as usize);
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    EmbeddingMatrix::from_data(rows, dim, data)
}

/// Writes `path` and `path.meta.json`. The matrix must validate cleanly.
pub fn write_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let report = validate(matrix);
    if !report.is_empty() {
        return Err(Error::InvalidMatrix(report.to_string()));
    }
    let bytes = encode(matrix)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;

    let sidecar = Sidecar {
        encoder: matrix.meta.encoder.clone(),
        dataset: matrix.meta.dataset.clone(),
        row_ids: matrix.row_ids.clone(),
        records: matrix.meta.records.clone(),
        labels: matrix.meta.labels.as_ref().map(LabelTable::entries),
        class_labels: matrix.meta.class_labels.clone(),
        extra: matrix.meta.extra.clone(),
    };
    let side = sidecar_path(path);
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    fs::write(&side, text).map_err(|e| Error::io(side, e))
}

/// Reads `path`, and its sidecar when one exists.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut matrix = decode(&bytes, path)?;

    let side = sidecar_path(path);
    let text = match fs::read_to_string(&side) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(matrix),
        Err(e) => return Err(Error::io(side, e)),
    };
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    if sidecar.row_ids.len() != matrix.rows {
        return Err(Error::SidecarMismatch(format!(
            "{} row ids in sidecar, {} rows in tensor",
            sidecar.row_ids.len(),
            matrix.rows
        )));
    }
    if let Some(cl) = &sidecar.class_labels {
        if cl.len() != matrix.rows {
            return Err(Error::SidecarMismatch(format!(
                "{} class labels in sidecar, {} rows in tensor",
                cl.len(),
                matrix.rows
            )));
        }
    }
    let records = sidecar.records.map(|mut records| {
        for (i, r) in records.iter_mut().enumerate() {
            if r.row_index == usize::MAX {
                r.row_index = i;
            }
        }
        records
    });
    if let Some(bad) = records
        .as_ref()
        .and_then(|rs| rs.iter().find(|r| r.row_index >= matrix.rows))
    {
        return Err(Error::SidecarMismatch(format!(
            "record {} points at row {} of {}",
            bad.proposal_id, bad.row_index, matrix.rows
        )));
    }
    matrix.row_ids = sidecar.row_ids;
    matrix.meta = Metadata {
        encoder: sidecar.encoder,
        dataset: sidecar.dataset,
        records,
        labels: sidecar.labels.map(LabelTable::from_entries).transpose()?,
        class_labels: sidecar.class_labels,
        extra: sidecar.extra,
    };
    Ok(matrix)
}

pub fn write_labels(labels: &LabelTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(&labels.entries())?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    LabelTable::from_entries(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap()
    }

    #[test]
    fn layout_of_two_by_three() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(&bytes[0..4], b"EMB1");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 24 + 6 * 4);
        let vals: Vec<f32> = bytes[24..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(vals, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn empty_matrix_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.emb");
        let m = EmbeddingMatrix::from_data(0, 7, vec![]).unwrap();
        write_embeddings(&m, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 24);
        let back = read_embeddings(&path).unwrap();
        assert_eq!(back.rows(), 0);
        assert_eq!(back.dim(), 7);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[0..4].copy_from_slice(b"XXXX");
        let err = decode(&bytes, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }), "{err}");
    }

    #[test]
    fn truncated_payload_rejected() {
        let bytes = encode(&sample()).unwrap();
        let err = decode(&bytes[..bytes.len() - 3], Path::new("x")).unwrap_err();
        assert!(
            matches!(err, Error::Truncated { expected: 48, found: 45 }),
            "{err}"
        );
        let err = decode(&bytes[..10], Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }));
    }

    #[test]
    fn sidecar_row_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.emb");
        write_embeddings(&sample(), &path).unwrap();
        fs::write(
            sidecar_path(&path),
            r#"{"encoder":"e","dataset":"d","row_ids":["a"]}"#,
        )
        .unwrap();
        let err = read_embeddings(&path).unwrap_err();
        assert!(matches!(err, Error::SidecarMismatch(_)), "{err}");
    }

    #[test]
    fn validate_reports_nan_position() {
        let mut data = vec![0.5f32; 5 * 8];
        data[3 * 8 + 7] = f32::NAN;
        let m = EmbeddingMatrix::from_data(5, 8, data).unwrap();
        let report = validate(&m);
        assert_eq!(report.non_finite, vec![(3, 7)]);
        assert_eq!(report.findings(), 1);
        assert!(validate(&sample()).is_empty());
    }

    #[test]
    fn validate_reports_duplicate_ids() {
        let ids = vec!["img_5".to_string(), "img_1".into(), "img_5".into()];
        let m = EmbeddingMatrix::new(3, 1, vec![1.0, 2.0, 3.0], ids).unwrap();
        assert_eq!(validate(&m).duplicate_ids, vec!["img_5".to_string()]);
        assert!(write_embeddings(&m, std::env::temp_dir().join("never.emb")).is_err());
    }

    #[test]
    fn metadata_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.emb");
        let mut m = sample();
        m.meta.encoder = "clip-vit-l14".into();
        m.meta.dataset = "toy".into();
        m.meta.records = Some(vec![ProposalRecord {
            proposal_id: "p0".into(),
            source_image_id: "img0".into(),
            class_label: 1,
            bbox: [3, 4, 10, 20],
            area: 200,
            row_index: 1,
        }]);
        m.meta.labels = Some(LabelTable::new(vec!["cat".into(), "dog".into()]).unwrap());
        m.meta.class_labels = Some(vec![0, 1]);
        m.meta.extra.insert("k".into(), Value::from(40));
        write_embeddings(&m, &path).unwrap();
        assert_eq!(read_embeddings(&path).unwrap(), m);
    }

    #[test]
    fn records_without_row_index_use_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.emb");
        write_embeddings(&sample(), &path).unwrap();
        fs::write(
            sidecar_path(&path),
            r#"{"encoder":"e","dataset":"d","row_ids":["a","b"],
               "records":[{"proposal_id":"p","source_image_id":"i","class_label":0,"bbox":[0,0,2,2],"area":4},
                          {"proposal_id":"q","source_image_id":"i","class_label":0,"bbox":[0,0,2,2],"area":4}]}"#,
        )
        .unwrap();
        let m = read_embeddings(&path).unwrap();
        let rows: Vec<usize> = m.meta.records.unwrap().iter().map(|r| r.row_index).collect();
        assert_eq!(rows, vec![0, 1]);
    }

    #[test]
    fn label_table_rejects_gaps_and_duplicates() {
        let gap = vec![
            LabelEntry { index: 0, name: "a".into() },
            LabelEntry { index: 2, name: "b".into() },
        ];
        assert!(LabelTable::from_entries(gap).is_err());
        assert!(LabelTable::new(vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn select_rows_repoints_records() {
        let mut m = EmbeddingMatrix::from_rows(&[[0.0f32], [1.0], [2.0]]).unwrap();
        m.meta.class_labels = Some(vec![0, 1, 2]);
        m.meta.records = Some(
            (0..3)
                .map(|i| ProposalRecord {
                    proposal_id: format!("p{i}"),
                    source_image_id: format!("i{i}"),
                    class_label: i,
                    bbox: [0, 0, 1, 1],
                    area: 1,
                    row_index: i,
                })
                .collect(),
        );
        let s = m.select_rows(&[2, 0]).unwrap();
        assert_eq!(s.data(), &[2.0, 0.0]);
        assert_eq!(s.meta.class_labels, Some(vec![2, 0]));
        let recs = s.meta.records.unwrap();
        assert_eq!(recs[0].proposal_id, "p2");
        assert_eq!(recs[0].row_index, 0);
        assert_eq!(recs[1].row_index, 1);
    }
}
