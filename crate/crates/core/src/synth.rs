//! Synthetic embedding datasets with known concept structure.
//!
//! Every class owns `concepts_per_class` latent concept centers. All centers
//! are vertices of one regular simplex (scaled basis vectors), so any two
//! centers sit exactly `class_separation * noise_sigma` apart. A proposal is
//! its center plus isotropic Gaussian noise; an image embedding is the mean of
//! its proposals plus noise of the same scale as that mean's own noise.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor_io::{self, EmbeddingMatrix, LabelTable, Metadata, ProposalRecord};

const IMAGE_SIDE: u32 = 224;
const MIN_BOX_SIDE: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub images_per_class: usize,
    pub proposals_per_image: usize,
    pub concepts_per_class: usize,
    pub dim: usize,
    /// Distance between any two concept centers, in units of `noise_sigma`.
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_classes: 10,
            images_per_class: 100,
            proposals_per_image: 5,
            concepts_per_class: 2,
            dim: 64,
            class_separation: 8.0,
            noise_sigma: 1.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn n_centers(&self) -> usize {
        self.n_classes * self.concepts_per_class
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_classes", self.n_classes),
            ("images_per_class", self.images_per_class),
            ("proposals_per_image", self.proposals_per_image),
            ("concepts_per_class", self.concepts_per_class),
            ("dim", self.dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return Err(Error::InvalidArgument("class_separation must be >= 0".into()));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument("noise_sigma must be > 0".into()));
        }
        if self.dim < self.n_centers() {
            return Err(Error::InvalidArgument(format!(
                "dim {} cannot host {} equidistant centers",
                self.dim,
                self.n_centers()
            )));
        }
        Ok(())
    }

    /// Images per class that land in the training split (80%, at least one).
    pub fn train_per_class(&self) -> usize {
        (4 * self.images_per_class).div_ceil(5).min(self.images_per_class)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    /// Proposals of training images, with records and per-row class labels.
    pub proposals: EmbeddingMatrix,
    /// Ground-truth center index of every proposal row.
    pub proposal_centers: Vec<usize>,
    pub train: EmbeddingMatrix,
    pub test: EmbeddingMatrix,
    /// `n_classes * concepts_per_class` rows; center `c * concepts_per_class + p`
    /// belongs to class `c`.
    pub centers: EmbeddingMatrix,
    pub labels: LabelTable,
}

impl SynthData {
    pub fn train_labels(&self) -> &[usize] {
        self.train.meta.class_labels.as_deref().expect("synthetic sets are labelled")
    }

    pub fn test_labels(&self) -> &[usize] {
        self.test.meta.class_labels.as_deref().expect("synthetic sets are labelled")
    }

    /// Writes `proposals.emb`, `train.emb`, `test.emb`, `centers.emb` (each
    /// with sidecar) and `labels.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        tensor_io::write_embeddings(&self.proposals, dir.join("proposals.emb"))?;
        tensor_io::write_embeddings(&self.train, dir.join("train.emb"))?;
        tensor_io::write_embeddings(&self.test, dir.join("test.emb"))?;
        tensor_io::write_embeddings(&self.centers, dir.join("centers.emb"))?;
        tensor_io::write_labels(&self.labels, dir.join("labels.json"))
    }
}

struct Image {
    id: String,
    class: usize,
    embedding: Vec<f32>,
    proposals: Vec<(Vec<f32>, usize, [u32; 4])>,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim;
    let sigma = spec.noise_sigma;
    let cpc = spec.concepts_per_class;
    let ppi = spec.proposals_per_image;

    // basis vectors scaled so neighbours are `separation * sigma` apart
    let radius = spec.class_separation * sigma / std::f64::consts::SQRT_2;
    let centers: Vec<Vec<f64>> = (0..spec.n_centers())
        .map(|v| {
            let mut c = vec![0.0; dim];
            c[v] = radius;
            c
        })
        .collect();

    let image_sigma = sigma / (ppi as f64).sqrt();
    let mut images = Vec::with_capacity(spec.n_classes * spec.images_per_class);
    for class in 0..spec.n_classes {
        for i in 0..spec.images_per_class {
            let offset = rng.random_range(0..cpc);
            let mut sum = vec![0.0f64; dim];
            let mut proposals = Vec::with_capacity(ppi);
            for p in 0..ppi {
                let center = class * cpc + (offset + p) % cpc;
                let v: Vec<f64> = centers[center]
                    .iter()
                    .map(|&c| c + sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                sum.iter_mut().zip(&v).for_each(|(s, x)| *s += x);
                let w = rng.random_range(MIN_BOX_SIDE..=IMAGE_SIDE);
                let h = rng.random_range(MIN_BOX_SIDE..=IMAGE_SIDE);
                let x = rng.random_range(0..=IMAGE_SIDE - w);
                let y = rng.random_range(0..=IMAGE_SIDE - h);
                proposals.push((v.iter().map(|&x| x as f32).collect(), center, [x, y, w, h]));
            }
            let embedding = sum
                .iter()
                .map(|s| (s / ppi as f64 + image_sigma * rng.sample::<f64, _>(StandardNormal)) as f32)
                .collect();
            images.push(Image {
                id: format!("c{class:03}_img{i:04}"),
                class,
                embedding,
                proposals,
            });
        }
    }

    // stratified split: shuffle each class's images, first 80% train
    let n_train = spec.train_per_class();
    let mut is_train = vec![false; images.len()];
    for class in 0..spec.n_classes {
        let base = class * spec.images_per_class;
        let mut idx: Vec<usize> = (base..base + spec.images_per_class).collect();
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        for &i in &idx[..n_train] {
            is_train[i] = true;
        }
    }

    let labels = LabelTable::new((0..spec.n_classes).map(|c| format!("class_{c:03}")).collect())?;
    let meta = |dataset: &str| Metadata {
        encoder: "synthetic".into(),
        dataset: dataset.into(),
        labels: Some(labels.clone()),
        ..Metadata::default()
    };

    let split = |train: bool, name: &str| -> Result<EmbeddingMatrix> {
        let chosen: Vec<&Image> = images
            .iter()
            .zip(&is_train)
            .filter(|(_, &t)| t == train)
            .map(|(img, _)| img)
            .collect();
        let data = chosen.iter().flat_map(|img| img.embedding.iter().copied()).collect();
        let ids = chosen.iter().map(|img| img.id.clone()).collect();
        let mut m = EmbeddingMatrix::new(chosen.len(), dim, data, ids)?.with_meta(meta(name));
        m.meta.class_labels = Some(chosen.iter().map(|img| img.class).collect());
        Ok(m)
    };
    let train = split(true, "synthetic-train")?;
    let test = split(false, "synthetic-test")?;

    let mut data = Vec::new();
    let mut ids = Vec::new();
    let mut records = Vec::new();
    let mut class_labels = Vec::new();
    let mut proposal_centers = Vec::new();
    for img in images.iter().zip(&is_train).filter(|(_, &t)| t).map(|(img, _)| img) {
        for (p, (v, center, bbox)) in img.proposals.iter().enumerate() {
            let id = format!("{}_p{p}", img.id);
            records.push(ProposalRecord {
                proposal_id: id.clone(),
                source_image_id: img.id.clone(),
                class_label: img.class,
                bbox: *bbox,
                area: u64::from(bbox[2]) * u64::from(bbox[3]),
                row_index: ids.len(),
            });
            data.extend_from_slice(v);
            ids.push(id);
            class_labels.push(img.class);
            proposal_centers.push(*center);
        }
    }
    let mut proposals =
        EmbeddingMatrix::new(ids.len(), dim, data, ids)?.with_meta(meta("synthetic-proposals"));
    proposals.meta.records = Some(records);
    proposals.meta.class_labels = Some(class_labels);

    let center_data = centers.iter().flatten().map(|&v| v as f32).collect();
    let center_ids = (0..spec.n_centers())
        .map(|v| format!("class_{:03}_concept_{}", v / cpc, v % cpc))
        .collect();
    let centers = EmbeddingMatrix::new(spec.n_centers(), dim, center_data, center_ids)?
        .with_meta(meta("synthetic-centers"));

    Ok(SynthData {
        proposals,
        proposal_centers,
        train,
        test,
        centers,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            n_classes: 3,
            images_per_class: 10,
            proposals_per_image: 2,
            concepts_per_class: 2,
            dim: 8,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn shapes_and_balance() {
        let d = generate(&small()).unwrap();
        assert_eq!(d.train.rows(), 24);
        assert_eq!(d.test.rows(), 6);
        assert_eq!(d.proposals.rows(), 48);
        for c in 0..3 {
            assert_eq!(d.train_labels().iter().filter(|&&l| l == c).count(), 8);
            assert_eq!(d.test_labels().iter().filter(|&&l| l == c).count(), 2);
        }
        assert!(d.proposals.validate().is_empty());
        assert!(d.train.validate().is_empty());
        assert!(d.test.validate().is_empty());
    }

    #[test]
    fn centers_are_equidistant() {
        let spec = small();
        let d = generate(&spec).unwrap();
        let want = spec.class_separation * spec.noise_sigma;
        for a in 0..d.centers.rows() {
            for b in a + 1..d.centers.rows() {
                let dist: f64 = d
                    .centers
                    .row(a)
                    .iter()
                    .zip(d.centers.row(b))
                    .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((dist - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = SynthSpec { seed: 8, ..small() };
        assert_ne!(generate(&small()).unwrap().train, generate(&other).unwrap().train);
    }

    #[test]
    fn proposals_belong_to_training_images() {
        let d = generate(&small()).unwrap();
        let train_ids: std::collections::HashSet<&str> =
            d.train.row_ids().iter().map(String::as_str).collect();
        for r in d.proposals.meta.records.as_ref().unwrap() {
            assert!(train_ids.contains(r.source_image_id.as_str()));
            assert_eq!(r.area, r.box_area());
            assert!(r.bbox[0] + r.bbox[2] <= 224 && r.bbox[1] + r.bbox[3] <= 224);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&SynthSpec { n_classes: 0, ..small() }).is_err());
        assert!(generate(&SynthSpec { noise_sigma: 0.0, ..small() }).is_err());
        assert!(generate(&SynthSpec { class_separation: -1.0, ..small() }).is_err());
        assert!(generate(&SynthSpec { dim: 5, ..small() }).is_err());
    }
}
