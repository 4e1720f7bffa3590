use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::vector_store::dot;

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, ties to the lowest index.
pub(crate) fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

pub(crate) struct KMeansFit {
    pub centroids: Vec<f64>,
    /// Set when seeding ran out of distinct points and had to repeat one.
    pub duplicated: bool,
}

/// Lloyd's algorithm with k-means++ seeding over `n = data.len() / dim`
/// points. Always ends on an update step, so each centroid with members is
/// the mean of its last assignment. Empty clusters keep their centroid.
pub(crate) fn fit(data: &[f64], dim: usize, k: usize, iters: usize, rng: &mut ChaCha8Rng) -> KMeansFit {
    let n = data.len() / dim;
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let (mut centroids, duplicated) = seed_plus_plus(data, dim, k, rng);
    let mut assign = vec![0usize; n];
    for it in 0..iters {
        let mut changed = false;
        for i in 0..n {
            let (c, _) = nearest(point(i), &centroids, dim);
            changed |= c != assign[i];
            assign[i] = c;
        }
        // Centroids are already the means of this assignment.
        if it > 0 && !changed {
            break;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assign[i];
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(point(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
    }
    KMeansFit {
        centroids,
        duplicated,
    }
}

fn seed_plus_plus(data: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, bool) {
    let n = data.len() / dim;
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(point(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), point(first))).collect();
    let mut duplicated = false;
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    chosen = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            chosen.expect("positive total has a positive weight")
        } else {
            duplicated = true;
            rng.random_range(0..n)
        };
        let p = point(pick).to_vec();
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(sq_dist(point(i), &p));
        }
        centroids.extend_from_slice(&p);
    }
    (centroids, duplicated)
}

/// Mean squared norm per row of a flat matrix.
pub(crate) fn mean_sq_norm(data: &[f64], dim: usize) -> f64 {
    let n = data.len() / dim;
    if n == 0 {
        return 0.0;
    }
    data.chunks_exact(dim).map(|r| dot(r, r)).sum::<f64>() / n as f64
}
