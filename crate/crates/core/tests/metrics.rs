use dcbm::metrics::{self, gini, gpg_aggregate, gpg_max_hit, gpg_percentage, GpgSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mean absolute pairwise difference over twice the mean, times n / (n - 1).
fn gini_pairwise(x: &[f64; 4]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let mut diff = 0.0;
    for a in x {
        for b in x {
            diff += (a - b).abs();
        }
    }
    diff / (n * n) / (2.0 * mean) * n / (n - 1.0)
}

fn random_scores(rng: &mut ChaCha8Rng) -> [f64; 4] {
    [0; 4].map(|_| rng.random_range(0.0..1.0))
}

#[test]
fn gini_matches_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    assert!((gini(&[0.5, 0.3, 0.1, 0.1]).unwrap() - 0.46667).abs() < 1e-5);
    for _ in 0..500 {
        let s = random_scores(&mut rng);
        assert!((gini(&s).unwrap() - gini_pairwise(&s)).abs() < 1e-12);
    }
}

#[test]
fn gini_invariances() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..200 {
        let s = random_scores(&mut rng);
        let g = gini(&s).unwrap();
        let scaled = s.map(|v| v * 37.5);
        assert!((gini(&scaled).unwrap() - g).abs() < 1e-12);
        let rotated = [s[2], s[0], s[3], s[1]];
        assert!((gini(&rotated).unwrap() - g).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&g));
    }
}

#[test]
fn percentage_scales_and_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..100 {
        let s = random_scores(&mut rng);
        let total: f64 = (0..4).map(|q| gpg_percentage(&GpgSample::new(s, q)).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn monte_carlo_baselines() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let samples: Vec<GpgSample> = (0..1000)
        .map(|_| {
            let s = random_scores(&mut rng);
            GpgSample::new(s, rng.random_range(0..4))
        })
        .collect();
    let r = gpg_aggregate(&samples).unwrap();
    assert!((r.mean_percentage - 0.25).abs() <= 0.02, "{r:?}");
    assert!((r.mean_max_hit - 0.25).abs() <= 0.03, "{r:?}");
    let hits: f64 = samples.iter().map(|s| f64::from(gpg_max_hit(s).unwrap())).sum();
    assert_eq!(hits / 1000.0, r.mean_max_hit);
}

#[test]
fn sample_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let samples: Vec<GpgSample> = (0..20)
        .map(|i| GpgSample {
            image_id: format!("img_{i}"),
            concept_id: (i % 2 == 0).then(|| format!("concept_{i}")),
            quadrant_scores: random_scores(&mut rng),
            correct_quadrant: i % 4,
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gpg.jsonl");
    metrics::write_gpg_samples(&samples, Some("normalization: relu then sum\nseed: 45"), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# normalization: relu then sum\n# seed: 45\n"));
    assert_eq!(metrics::read_gpg_samples(&path).unwrap(), samples);
}

#[test]
fn report_table_lists_every_metric() {
    let r = gpg_aggregate(&[GpgSample::new([0.7, 0.1, 0.1, 0.1], 0)]).unwrap();
    let table = r.to_string();
    for key in ["gini", "percentage", "max_hit", "samples"] {
        assert!(table.contains(key), "{table}");
    }
}
