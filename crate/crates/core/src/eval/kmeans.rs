use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EvalError;
use crate::autodiff::Matrix;

const MAX_ITERATIONS: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Matrix,
    /// Within-cluster sum of squares of the returned clustering.
    pub objective: f64,
    /// Objective after every centroid update, per restart.
    pub histories: Vec<Vec<f64>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn plus_plus_seeds(z: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = z.rows();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), z.row(chosen[0]))).collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&nearest) {
            Ok(w) => w.sample(rng),
            // every point coincides with a seed already
            Err(_) => (0..n).find(|i| !chosen.contains(i)).unwrap_or(0),
        };
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(z.row(i), z.row(next)));
        }
    }
    z.select_rows(&chosen)
}

/// Ties go to the lowest centroid index.
fn assign(z: &Matrix, centroids: &Matrix, labels: &mut [usize]) -> bool {
    let mut changed = false;
    for (i, label) in labels.iter_mut().enumerate() {
        let mut best = (f64::INFINITY, 0);
        for c in 0..centroids.rows() {
            let d = sq_dist(z.row(i), centroids.row(c));
            if d < best.0 {
                best = (d, c);
            }
        }
        if *label != best.1 {
            *label = best.1;
            changed = true;
        }
    }
    changed
}

/// Empty clusters keep their previous centroid.
fn update(z: &Matrix, labels: &[usize], centroids: &mut Matrix) {
    let k = centroids.rows();
    let mut sums = Matrix::zeros(k, z.cols());
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums.row_mut(l).iter_mut().zip(z.row(i)) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s / counts[c] as f64;
            }
        }
    }
}

pub fn within_cluster_ss(z: &Matrix, labels: &[usize], centroids: &Matrix) -> f64 {
    labels.iter().enumerate().map(|(i, &l)| sq_dist(z.row(i), centroids.row(l))).sum()
}

/// Lloyd's algorithm with k-means++ seeding; keeps the restart with the
/// lowest within-cluster sum of squares.
pub fn kmeans(z: &Matrix, k: usize, restarts: usize, seed: u64) -> Result<KMeansResult, EvalError> {
    let n = z.rows();
    if k == 0 || k > n {
        return Err(EvalError::KTooLarge { k, n });
    }
    if !z.is_finite() {
        return Err(EvalError::NonFinite);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    let mut histories = Vec::new();
    for _ in 0..restarts.max(1) {
        let mut centroids = plus_plus_seeds(z, k, &mut rng);
        let mut labels = vec![usize::MAX; n];
        let mut history = Vec::new();
        for _ in 0..MAX_ITERATIONS {
            if !assign(z, &centroids, &mut labels) {
                break;
            }
            update(z, &labels, &mut centroids);
            history.push(within_cluster_ss(z, &labels, &centroids));
        }
        let objective = *history.last().unwrap_or(&within_cluster_ss(z, &labels, &centroids));
        histories.push(history);
        if best.as_ref().map_or(true, |b| objective < b.objective) {
            best = Some(KMeansResult { labels, centroids, objective, histories: Vec::new() });
        }
    }
    let mut best = best.expect("at least one restart");
    best.histories = histories;
    Ok(best)
}
