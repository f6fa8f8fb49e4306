use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default iteration cap of [`kmeans`].
pub const DEFAULT_MAX_ITER: usize = 300;

/// Outcome of Lloyd's algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after initialisation and after every iteration.
    pub inertia: Vec<f64>,
    pub iterations: usize,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties go to the lowest index.
pub fn nearest(centers: &[Vec<f64>], point: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(c, point);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn inertia(points: &[Vec<f64>], centers: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points.iter().zip(assignments).map(|(p, &a)| sq_dist(p, &centers[a])).sum()
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !distinct.contains(&p) {
            distinct.push(p);
        }
    }
    distinct.len()
}

/// k-means++ seeding: first center uniform, later ones with probability
/// proportional to the squared distance to the nearest chosen center.
fn seed_centers(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = d2.iter().rposition(|d| *d > 0.0).unwrap_or(0);
        for (i, d) in d2.iter().enumerate() {
            if *d <= 0.0 {
                continue;
            }
            if target < *d {
                pick = i;
                break;
            }
            target -= d;
        }
        centers.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

/// Lloyd's algorithm with seeded k-means++ initialisation.
///
/// Stops when the assignments no longer change or after `max_iter` iterations.
/// A cluster that loses all its points is moved to the point farthest from its
/// current center, which keeps exactly `k` clusters.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::invalid("k", "need at least one cluster"));
    }
    if let Some(dim) = points.first().map(Vec::len) {
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::ShapeMismatch("feature vectors differ in length".into()));
        }
    }
    let distinct = distinct_count(points);
    if distinct < k {
        return Err(Error::DegenerateInput(format!("{distinct} distinct points for {k} clusters")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_centers(points, k, &mut rng);
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(&centers, p)).collect();
    let mut history = vec![inertia(points, &centers, &assignments)];
    let dim = points[0].len();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                let far = (0..points.len())
                    .max_by(|&i, &j| {
                        let di = sq_dist(&points[i], &centers[assignments[i]]);
                        let dj = sq_dist(&points[j], &centers[assignments[j]]);
                        di.total_cmp(&dj).then(j.cmp(&i))
                    })
                    .expect("points are not empty");
                centers[c] = points[far].clone();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(&centers, p)).collect();
        let changed = next != assignments;
        assignments = next;
        history.push(inertia(points, &centers, &assignments));
        if !changed {
            break;
        }
    }
    Ok(KMeans {
        centers,
        assignments,
        inertia: history,
        iterations,
    })
}
