//! Seeded k-means used to initialize source dictionaries.
//!
//! k-means++ seeding followed by a fixed number of Lloyd iterations. Data is
//! vector-major `f64`. Nearest-center ties go to the lowest center index and
//! empty clusters keep their previous center.

use rand::Rng;
use rayon::prelude::*;

/// Squared Euclidean distance, accumulated in index order.
#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding: the first center is uniform, later centers are drawn
/// with probability proportional to the squared distance to the closest
/// chosen center. When every point already coincides with a center the draw
/// falls back to uniform, so `k` may exceed the number of distinct points.
pub fn seed_plus_plus<R: Rng>(data: &[f64], dim: usize, k: usize, rng: &mut R) -> Vec<f64> {
    let n = data.len() / dim;
    assert!(n > 0 && k > 0, "k-means needs data and at least one center");
    let point = |i: usize| &data[i * dim..(i + 1) * dim];

    let mut centers = Vec::with_capacity(k * dim);
    centers.extend_from_slice(point(rng.random_range(0..n)));
    let mut weights: Vec<f64> = (0..n).map(|i| sq_dist(point(i), &centers[..dim])).collect();

    while centers.len() < k * dim {
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, w) in weights.iter().enumerate() {
                acc += w;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let start = centers.len();
        centers.extend_from_slice(point(pick));
        let newest = &centers[start..];
        for (i, w) in weights.iter_mut().enumerate() {
            *w = w.min(sq_dist(point(i), newest));
        }
    }
    centers
}

/// Runs k-means++ seeding and up to `iters` Lloyd iterations. Returns the
/// `k * dim` center values.
pub fn kmeans<R: Rng>(data: &[f64], dim: usize, k: usize, iters: usize, rng: &mut R) -> Vec<f64> {
    let n = data.len() / dim;
    let mut centers = seed_plus_plus(data, dim, k, rng);
    let mut assign = vec![usize::MAX; n];
    for _ in 0..iters {
        let next: Vec<usize> = data
            .par_chunks_exact(dim)
            .map(|p| nearest(p, &centers, dim).0)
            .collect();
        if next == assign {
            break;
        }
        assign = next;
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in assign.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim]
                .iter_mut()
                .zip(&data[i * dim..(i + 1) * dim])
            {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centers[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..(c + 1) * dim])
                {
                    *dst = s * inv;
                }
            }
        }
    }
    centers
}

/// Nearest-center index of every point.
pub fn assign(data: &[f64], dim: usize, centers: &[f64]) -> Vec<usize> {
    data.par_chunks_exact(dim).map(|p| nearest(p, centers, dim).0).collect()
}

/// Sum of squared distances from each point to its nearest center.
pub fn inertia(data: &[f64], dim: usize, centers: &[f64]) -> f64 {
    let d: Vec<f64> = data.par_chunks_exact(dim).map(|p| nearest(p, centers, dim).1).collect();
    d.iter().sum()
}

/// Runs [`kmeans`] `restarts` times from one RNG stream and keeps the run
/// with the lowest inertia (earliest run on ties).
pub fn kmeans_best_of<R: Rng>(
    data: &[f64],
    dim: usize,
    k: usize,
    iters: usize,
    restarts: usize,
    rng: &mut R,
) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..restarts.max(1) {
        let centers = kmeans(data, dim, k, iters, rng);
        let cost = inertia(data, dim, &centers);
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, centers));
        }
    }
    best.expect("at least one run").1
}
