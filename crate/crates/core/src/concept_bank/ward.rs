//! Bottom-up Ward clustering on Euclidean distance.
//!
//! Merge costs are the increase in within-cluster sum of squares,
//! `n_a n_b / (n_a + n_b) * |c_a - c_b|^2`, kept in a condensed matrix and
//! updated with the Lance-Williams recurrence. Each live row caches its
//! cheapest partner with a larger index, so a merge costs O(n) amortised.

use crate::error::{Error, Result};
use crate::tensor_io::EmbeddingMatrix;

/// Default row cap; the condensed cost matrix needs `8 n^2 / 2` bytes.
pub const DEFAULT_ROW_CAP: usize = 8192;

pub fn agglomerative_cluster(matrix: &EmbeddingMatrix, k: usize) -> Result<Vec<usize>> {
    agglomerative_cluster_capped(matrix, k, DEFAULT_ROW_CAP)
}

/// Merges until `k` clusters remain. Among equal-cost merges the pair with
/// the smallest `(i, j)` slot indices wins; a merged cluster keeps slot `i`.
/// Labels are dense and ordered by each cluster's smallest row index.
pub fn agglomerative_cluster_capped(
    matrix: &EmbeddingMatrix,
    k: usize,
    cap: usize,
) -> Result<Vec<usize>> {
    let n = matrix.rows();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if n < k {
        return Err(Error::TooFewRows { rows: n, needed: k });
    }
    if n > cap {
        return Err(Error::CapExceeded { rows: n, cap });
    }

    let mut costs = Condensed::new(n);
    for i in 0..n {
        let a = matrix.row(i);
        for j in i + 1..n {
            let d2: f64 = a
                .iter()
                .zip(matrix.row(j))
                .map(|(&x, &y)| {
                    let d = f64::from(x) - f64::from(y);
                    d * d
                })
                .sum();
            costs.set(i, j, d2 / 2.0);
        }
    }

    let mut size = vec![1usize; n];
    let mut alive = vec![true; n];
    let mut parent: Vec<usize> = (0..n).collect();
    let mut nearest: Vec<Option<(usize, f64)>> =
        (0..n).map(|i| nearest_above(&costs, &alive, i)).collect();

    let mut clusters = n;
    while clusters > k {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            if let Some((j, c)) = nearest[i] {
                if best.is_none_or(|(_, _, b)| c < b) {
                    best = Some((i, j, c));
                }
            }
        }
        let (i, j, cij) = best.expect("more than k clusters implies a candidate pair");

        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for l in 0..n {
            if !alive[l] || l == i || l == j {
                continue;
            }
            let nl = size[l] as f64;
            let merged = ((ni + nl) * costs.get(l, i) + (nj + nl) * costs.get(l, j) - nl * cij)
                / (ni + nj + nl);
            costs.set(l, i, merged);
        }
        size[i] += size[j];
        alive[j] = false;
        parent[j] = i;
        nearest[j] = None;
        clusters -= 1;

        nearest[i] = nearest_above(&costs, &alive, i);
        for l in 0..n {
            if !alive[l] || l == i {
                continue;
            }
            let partner = nearest[l].map(|(p, _)| p);
            if partner == Some(i) || partner == Some(j) {
                nearest[l] = nearest_above(&costs, &alive, l);
            } else if l < i {
                let c = costs.get(l, i);
                match nearest[l] {
                    Some((p, best)) if c < best || (c == best && i < p) => nearest[l] = Some((i, c)),
                    None => nearest[l] = Some((i, c)),
                    _ => {}
                }
            }
        }
    }

    let root = |mut x: usize| {
        while parent[x] != x {
            x = parent[x];
        }
        x
    };
    let mut label_of_root = vec![usize::MAX; n];
    let mut next = 0;
    Ok((0..n)
        .map(|row| {
            let r = root(row);
            if label_of_root[r] == usize::MAX {
                label_of_root[r] = next;
                next += 1;
            }
            label_of_root[r]
        })
        .collect())
}

fn nearest_above(costs: &Condensed, alive: &[bool], i: usize) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &live) in alive.iter().enumerate().skip(i + 1) {
        if live {
            let c = costs.get(i, j);
            if best.is_none_or(|(_, b)| c < b) {
                best = Some((j, c));
            }
        }
    }
    best
}

/// Upper triangle of a symmetric matrix, diagonal excluded.
struct Condensed {
    n: usize,
    values: Vec<f64>,
}

impl Condensed {
    fn new(n: usize) -> Self {
        Self {
            n,
            values: vec![0.0; n * n.saturating_sub(1) / 2],
        }
    }

    fn index(&self, a: usize, b: usize) -> usize {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    fn get(&self, a: usize, b: usize) -> f64 {
        self.values[self.index(a, b)]
    }

    fn set(&mut self, a: usize, b: usize, v: f64) {
        let idx = self.index(a, b);
        self.values[idx] = v;
    }
}
