//! Lloyd's k-means with k-means++ seeding.
//!
//! Deterministic for a fixed seed and input order. A point only moves to
//! another cluster when that centroid is strictly closer, so the
//! within-cluster SSE never increases between iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vector::squared_distance;

pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            max_iter: DEFAULT_MAX_ITER,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// SSE after seeding, then after every assign/update round.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansFit {
    pub fn sse(&self) -> f64 {
        *self.sse_history.last().unwrap_or(&0.0)
    }
}

/// Within-cluster sum of squared distances for a given assignment.
pub fn within_cluster_sse(
    points: &[Vec<f64>],
    centroids: &[Vec<f64>],
    assignments: &[usize],
) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a]))
        .sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++: first center uniform, later centers drawn with probability
/// proportional to squared distance from the nearest chosen center.
pub fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = points.len();
    let k = k.min(n);
    if k == 0 {
        return Vec::new();
    }
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &points[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                cum += d;
                pick = Some(i);
                if target < cum {
                    break;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // every point coincides with a chosen center
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(pick);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, &points[pick]));
        }
    }
    chosen
}

/// Runs Lloyd's algorithm with `min(k, n)` clusters.
pub fn fit(points: &[Vec<f64>], cfg: &KMeansConfig) -> Result<KMeansFit> {
    if points.is_empty() {
        return Err(Error::Empty("k-means needs at least one point".into()));
    }
    if cfg.k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::dims(
            format!("dim {dim}"),
            format!("dim {}", p.len()),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids: Vec<Vec<f64>> = kmeans_plus_plus(points, cfg.k, &mut rng)
        .into_iter()
        .map(|i| points[i].clone())
        .collect();
    let k = centroids.len();

    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut sse_history = vec![within_cluster_sse(points, &centroids, &assignments)];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iter {
        iterations += 1;

        // update step
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let n = counts[j] as f64;
                centroids[j] = sums[j].iter().map(|s| s / n).collect();
            }
        }

        // empty clusters restart at the point farthest from its centroid
        let mut reseeded = false;
        let mut taken: Vec<usize> = Vec::new();
        for j in (0..k).filter(|&j| counts[j] == 0) {
            let far = points
                .iter()
                .enumerate()
                .filter(|(i, _)| !taken.contains(i))
                .map(|(i, p)| (i, squared_distance(p, &centroids[assignments[i]])))
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            if let Some((i, d)) = far {
                centroids[j] = points[i].clone();
                taken.push(i);
                reseeded |= d > 0.0;
            }
        }

        // assignment step
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let current = squared_distance(p, &centroids[assignments[i]]);
            let (j, d) = nearest(p, &centroids);
            if d < current {
                assignments[i] = j;
                changed = true;
            }
        }
        sse_history.push(within_cluster_sse(points, &centroids, &assignments));

        if !changed && !reseeded {
            converged = true;
            break;
        }
    }

    Ok(KMeansFit {
        centroids,
        assignments,
        sse_history,
        iterations,
        converged,
    })
}
