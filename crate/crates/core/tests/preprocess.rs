// index loops mirror the textbook form of each oracle
#![allow(clippy::needless_range_loop)]

use std::collections::BTreeSet;

use dcbm::preprocess::{
    self, filter_by_area, pca_fit, pca_transform, subsample_per_class, AreaFilter, ImageEntry,
    PcaModel, SubsetSpec,
};
use dcbm::{EmbeddingMatrix, ProposalRecord};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Cyclic Jacobi rotations on a dense symmetric matrix; returns eigenvalues
/// in descending order with eigenvectors as columns.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y][y].total_cmp(&a[x][x]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|r| v[r][i]).collect()).collect();
    (values, vectors)
}

fn covariance(m: &EmbeddingMatrix) -> Vec<Vec<f64>> {
    let (n, d) = (m.rows(), m.dim());
    let mean: Vec<f64> = (0..d).map(|j| m.iter_rows().map(|r| f64::from(r[j])).sum::<f64>() / n as f64).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in m.iter_rows() {
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += (f64::from(r[a]) - mean[a]) * (f64::from(r[b]) - mean[b]);
            }
        }
    }
    cov.iter_mut().flatten().for_each(|v| *v /= (n - 1) as f64);
    cov
}

fn random_matrix(seed: u64, rows: usize, dim: usize) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // unequal column scales keep the eigenvalues well apart
    let data = (0..rows * dim)
        .map(|i| rng.sample::<f32, _>(StandardNormal) * (1.0 + (i % dim) as f32))
        .collect();
    EmbeddingMatrix::from_data(rows, dim, data).unwrap()
}

#[test]
fn pca_matches_jacobi_oracle() {
    for seed in 0..5 {
        let m = random_matrix(seed, 50, 8);
        let model = pca_fit(&m, 3).unwrap();
        let (values, vectors) = jacobi_eigen(covariance(&m));
        for i in 0..3 {
            let rel = (model.explained_variance[i] - values[i]).abs() / values[i];
            assert!(rel < 1e-9, "seed {seed} component {i}: {} vs {}", model.explained_variance[i], values[i]);
            let dot: f64 = model.components[i].iter().zip(&vectors[i]).map(|(a, b)| a * b).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-8, "seed {seed} component {i}: |dot| = {}", dot.abs());
        }
    }
}

#[test]
fn pca_rank_one_line() {
    // points t * (1, 2, 2) / 3 for t = 0..10
    let rows: Vec<[f32; 3]> = (0..10).map(|t| {
        let t = t as f32;
        [t / 3.0, 2.0 * t / 3.0, 2.0 * t / 3.0]
    }).collect();
    let m = EmbeddingMatrix::from_rows(&rows).unwrap();
    let model = pca_fit(&m, 1).unwrap();
    let ts: Vec<f64> = (0..10).map(f64::from).collect();
    let mean = ts.iter().sum::<f64>() / 10.0;
    let var = ts.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 9.0;
    assert!((model.explained_variance[0] - var).abs() < 1e-4);
    let c = &model.components[0];
    for (got, want) in c.iter().zip([1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]) {
        assert!((got - want).abs() < 1e-6, "{c:?}");
    }
}

#[test]
fn pca_full_rank_preserves_norms() {
    let m = random_matrix(9, 40, 6);
    let model = pca_fit(&m, 6).unwrap();
    let probe = random_matrix(10, 25, 6);
    let t = pca_transform(&model, &probe).unwrap();
    for (x, y) in probe.iter_rows().zip(t.iter_rows()) {
        let centred: f64 = x.iter().zip(&model.mean).map(|(&v, m)| (f64::from(v) - m).powi(2)).sum::<f64>().sqrt();
        let projected: f64 = y.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
        assert!((centred - projected).abs() < 1e-4, "{centred} vs {projected}");
    }
    let mean_row = EmbeddingMatrix::from_rows(&[model.mean.iter().map(|&v| v as f32).collect::<Vec<_>>()]).unwrap();
    assert!(pca_transform(&model, &mean_row).unwrap().data().iter().all(|v| v.abs() < 1e-5));
}

#[test]
fn pca_save_load_round_trip() {
    let m = random_matrix(4, 30, 5);
    let model = pca_fit(&m, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("pca");
    model.save(&prefix).unwrap();
    let back = PcaModel::load(&prefix).unwrap();
    assert_eq!(back.n_components(), 2);
    let (a, b) = (pca_transform(&model, &m).unwrap(), pca_transform(&back, &m).unwrap());
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-4);
    }
}

fn images(classes: usize, per_class: usize) -> Vec<ImageEntry> {
    (0..classes)
        .flat_map(|c| (0..per_class).map(move |i| ImageEntry { image_id: format!("c{c}_{i}"), class_label: c }))
        .collect()
}

#[test]
fn subsample_counts_and_seeds() {
    let all = images(10, 100);
    let picked = subsample_per_class(&all, SubsetSpec::new(50, 1).unwrap()).unwrap();
    assert_eq!(picked.len(), 500);
    for c in 0..10 {
        let prefix = format!("c{c}_");
        assert_eq!(picked.iter().filter(|id| id.starts_with(&prefix)).count(), 50);
    }
    assert_eq!(picked, subsample_per_class(&all, SubsetSpec::new(50, 1).unwrap()).unwrap());
    assert_ne!(picked, subsample_per_class(&all, SubsetSpec::new(50, 2).unwrap()).unwrap());

    let mut reversed = all.clone();
    reversed.reverse();
    assert_eq!(picked, subsample_per_class(&reversed, SubsetSpec::new(50, 1).unwrap()).unwrap());

    let small = images(1, 30);
    assert_eq!(subsample_per_class(&small, SubsetSpec::new(50, 0).unwrap()).unwrap().len(), 30);
}

fn record(i: usize, image: &str, area: u64) -> ProposalRecord {
    ProposalRecord {
        proposal_id: format!("p{i}"),
        source_image_id: image.into(),
        class_label: 0,
        bbox: [0, 0, 1, 1],
        area,
        row_index: i,
    }
}

#[test]
fn area_presets() {
    let recs: Vec<_> = [1000, 1001, 199_999, 200_000].iter().enumerate().map(|(i, &a)| record(i, "x", a)).collect();
    let gt: Vec<u64> = filter_by_area(&recs, AreaFilter::greater_than(1000)).iter().map(|r| r.area).collect();
    assert_eq!(gt, vec![1001, 199_999, 200_000]);
    let lt: Vec<u64> = filter_by_area(&recs, AreaFilter::less_than(200_000)).iter().map(|r| r.area).collect();
    assert_eq!(lt, vec![1000, 1001, 199_999]);
    assert_eq!(filter_by_area(&recs, AreaFilter::UNBOUNDED), recs);
}

#[test]
fn select_proposals_applies_both_filters() {
    let recs = vec![record(0, "a", 50), record(1, "b", 5000), record(2, "a", 5000), record(3, "c", 9000)];
    let data = (0..8).map(|v| v as f32).collect();
    let mut m = EmbeddingMatrix::from_data(4, 2, data).unwrap();
    m.meta.records = Some(recs);
    let keep: BTreeSet<String> = ["a".to_string(), "c".to_string()].into();
    let out = preprocess::select_proposals(&m, Some(&keep), AreaFilter::greater_than(1000)).unwrap();
    assert_eq!(out.rows(), 2);
    assert_eq!(out.data(), &[4.0, 5.0, 6.0, 7.0]);
    let ids: Vec<_> = out.meta.records.as_ref().unwrap().iter().map(|r| r.proposal_id.as_str()).collect();
    assert_eq!(ids, ["p2", "p3"]);
}

proptest! {
    #[test]
    fn area_filter_idempotent(areas in prop::collection::vec(0u64..300_000, 0..60), lo in 0u64..250_000, span in 0u64..250_000) {
        let recs: Vec<_> = areas.iter().enumerate().map(|(i, &a)| record(i, "x", a)).collect();
        let f = AreaFilter::new(lo, lo + span).unwrap();
        let once = filter_by_area(&recs, f);
        prop_assert_eq!(&filter_by_area(&once, f), &once);
        prop_assert!(once.iter().all(|r| r.area >= lo && r.area <= lo + span));
        prop_assert_eq!(once.len(), areas.iter().filter(|&&a| a >= lo && a <= lo + span).count());
    }

    #[test]
    fn subsample_never_exceeds_class_sizes(sizes in prop::collection::vec(1usize..40, 1..8), n in 1usize..50, seed in any::<u64>()) {
        let all: Vec<ImageEntry> = sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &s)| (0..s).map(move |i| ImageEntry { image_id: format!("c{c}_{i}"), class_label: c }))
            .collect();
        let picked = subsample_per_class(&all, SubsetSpec::new(n, seed).unwrap()).unwrap();
        for (c, &s) in sizes.iter().enumerate() {
            let prefix = format!("c{c}_");
            prop_assert_eq!(picked.iter().filter(|id| id.starts_with(&prefix)).count(), s.min(n));
        }
    }
}
