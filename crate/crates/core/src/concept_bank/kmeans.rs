//! Lloyd's algorithm with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor_io::EmbeddingMatrix;

/// Default number of concepts.
pub const DEFAULT_K: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusteringConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once the largest centroid move is below `tol` times the RMS
    /// distance of the data from its mean.
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest final objective wins.
    pub n_init: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            seed: 0,
            max_iters: 300,
            tol: 1e-4,
            n_init: 10,
        }
    }
}

impl ClusteringConfig {
    pub fn with_k(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if self.n_init == 0 {
            return Err(Error::InvalidArgument("n_init must be >= 1".into()));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::InvalidArgument("tol must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub assignments: Vec<usize>,
    /// `k x dim`, row-major; the centroids the final assignment was made against.
    pub centroids: Vec<f64>,
    /// Sum of squared distances after every assignment step, seeding included.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansFit {
    pub fn objective(&self) -> f64 {
        *self.objective_history.last().expect("at least one assignment")
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn kmeans_cluster(matrix: &EmbeddingMatrix, cfg: &ClusteringConfig) -> Result<KMeansFit> {
    cfg.validate()?;
    let (n, dim, k) = (matrix.rows(), matrix.dim(), cfg.k);
    if n < k {
        return Err(Error::TooFewRows { rows: n, needed: k });
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("cannot cluster zero-width embeddings".into()));
    }
    let points: Vec<f64> = matrix.data().iter().map(|&v| f64::from(v)).collect();
    let scale = data_scale(&points, n, dim);

    let mut best: Option<KMeansFit> = None;
    for restart in 0..cfg.n_init {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(restart as u64);
        let fit = lloyd(&points, n, dim, scale, cfg, &mut rng);
        // ties keep the earlier restart
        if best.as_ref().is_none_or(|b| fit.objective() < b.objective()) {
            best = Some(fit);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

fn lloyd(points: &[f64], n: usize, dim: usize, scale: f64, cfg: &ClusteringConfig, rng: &mut ChaCha8Rng) -> KMeansFit {
    let k = cfg.k;
    let mut centroids = plus_plus_seeds(points, n, dim, k, rng);

    let mut assignments = vec![0usize; n];
    let mut dists = vec![0.0f64; n];
    assign(points, dim, &centroids, &mut assignments, &mut dists);
    repair_empty(points, dim, k, &mut centroids, &mut assignments, &mut dists);
    let mut history = vec![dists.iter().sum::<f64>()];

    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        let previous = centroids.clone();
        update_means(points, dim, k, &assignments, &mut centroids);
        let shift = (0..k)
            .map(|j| sq_dist(&previous[j * dim..(j + 1) * dim], &centroids[j * dim..(j + 1) * dim]))
            .fold(0.0f64, f64::max)
            .sqrt();

        let before = assignments.clone();
        assign(points, dim, &centroids, &mut assignments, &mut dists);
        let repaired = repair_empty(points, dim, k, &mut centroids, &mut assignments, &mut dists);
        history.push(dists.iter().sum());

        // a repair can leave other rows closer to the reseeded centroid
        if !repaired && (assignments == before || shift < cfg.tol * scale) {
            converged = true;
            break;
        }
    }
    KMeansFit {
        assignments,
        centroids,
        objective_history: history,
        iterations,
        converged,
    }
}

fn data_scale(points: &[f64], n: usize, dim: usize) -> f64 {
    if n == 0 || dim == 0 {
        return 0.0;
    }
    let mut mean = vec![0.0f64; dim];
    for row in points.chunks_exact(dim) {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let total: f64 = points.chunks_exact(dim).map(|r| sq_dist(r, &mean)).sum();
    (total / n as f64).sqrt()
}

fn plus_plus_seeds(points: &[f64], n: usize, dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let mut chosen = vec![false; n];

    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(point(first));
    let mut d2: Vec<f64> = (0..n).into_par_iter().map(|i| sq_dist(point(i), point(first))).collect();

    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                acc += d;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total implies a positive entry")
        } else {
            // every remaining point coincides with a seed
            (0..n).find(|&i| !chosen[i]).expect("n >= k")
        };
        chosen[next] = true;
        let c = point(next).to_vec();
        d2.par_iter_mut().enumerate().for_each(|(i, d)| {
            let nd = sq_dist(point(i), &c);
            if nd < *d {
                *d = nd;
            }
        });
        centroids.extend_from_slice(&c);
    }
    centroids
}

/// Nearest centroid per row, ties to the smaller centroid index.
fn assign(points: &[f64], dim: usize, centroids: &[f64], assignments: &mut [usize], dists: &mut [f64]) {
    assignments
        .par_iter_mut()
        .zip(dists.par_iter_mut())
        .enumerate()
        .for_each(|(i, (a, d))| {
            let p = &points[i * dim..(i + 1) * dim];
            let mut best = (0usize, f64::INFINITY);
            for (j, c) in centroids.chunks_exact(dim).enumerate() {
                let dist = sq_dist(p, c);
                if dist < best.1 {
                    best = (j, dist);
                }
            }
            *a = best.0;
            *d = best.1;
        });
}

/// Moves the point farthest from its centroid into each empty cluster.
/// Returns whether anything moved.
fn repair_empty(
    points: &[f64],
    dim: usize,
    k: usize,
    centroids: &mut [f64],
    assignments: &mut [usize],
    dists: &mut [f64],
) -> bool {
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    let mut repaired = false;
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        repaired = true;
        let mut far: Option<(usize, f64)> = None;
        for (i, &d) in dists.iter().enumerate() {
            if counts[assignments[i]] > 1 && far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        let (i, _) = far.expect("rows >= k leaves a cluster with two members");
        counts[assignments[i]] -= 1;
        counts[j] = 1;
        assignments[i] = j;
        dists[i] = 0.0;
        centroids[j * dim..(j + 1) * dim].copy_from_slice(&points[i * dim..(i + 1) * dim]);
    }
    repaired
}

/// Per-cluster means, summed in row order.
fn update_means(points: &[f64], dim: usize, k: usize, assignments: &[usize], centroids: &mut [f64]) {
    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        let p = &points[i * dim..(i + 1) * dim];
        sums[a * dim..(a + 1) * dim]
            .iter_mut()
            .zip(p)
            .for_each(|(s, x)| *s += x);
    }
    for j in 0..k {
        if counts[j] == 0 {
            continue;
        }
        let inv = counts[j] as f64;
        for (c, s) in centroids[j * dim..(j + 1) * dim]
            .iter_mut()
            .zip(&sums[j * dim..(j + 1) * dim])
        {
            *c = s / inv;
        }
    }
}

/// Sum of squared distances from each row to the mean of its cluster.
pub fn within_cluster_sse(matrix: &EmbeddingMatrix, assignments: &[usize], k: usize) -> f64 {
    let dim = matrix.dim();
    let points: Vec<f64> = matrix.data().iter().map(|&v| f64::from(v)).collect();
    let mut means = vec![0.0f64; k * dim];
    update_means(&points, dim, k, assignments, &mut means);
    assignments
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(&points[i * dim..(i + 1) * dim], &means[a * dim..(a + 1) * dim]))
        .sum()
}
