//! Seeded spherical k-means for the IVF coarse quantizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::dot;

pub const KMEANS_ITERATIONS: usize = 20;

/// Upper bound on training points per centroid; larger inputs are sampled.
const MAX_POINTS_PER_CENTROID: usize = 256;

/// Index of the highest-scoring centroid (lowest index on ties).
fn nearest(point: &[f32], centroids: &[f32], dim: usize) -> (usize, f32) {
    let mut best = (0, f32::NEG_INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let s = dot(point, c);
        if s > best.1 {
            best = (i, s);
        }
    }
    best
}

fn normalize_in_place(v: &mut [f32]) -> bool {
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if norm == 0.0 {
        return false;
    }
    v.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
    true
}

/// k-means++ seeding over unit vectors, where squared distance is `2 - 2·dot`.
fn kmeans_pp(points: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = points.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = points
        .chunks_exact(dim)
        .map(|p| (2.0 - 2.0 * dot(p, &centroids[..dim]) as f64).max(0.0))
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        let c = points[pick * dim..(pick + 1) * dim].to_vec();
        for (p, d) in points.chunks_exact(dim).zip(d2.iter_mut()) {
            *d = d.min((2.0 - 2.0 * dot(p, &c) as f64).max(0.0));
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

/// Trains `k` unit-norm centroids: k-means++ seeding, then a fixed
/// [`KMEANS_ITERATIONS`] Lloyd iterations. Deterministic for a given seed.
pub fn train_centroids(matrix: &[f32], dim: usize, k: usize, seed: u64) -> Vec<f32> {
    let n = matrix.len() / dim;
    assert!(k >= 1 && n >= k, "need at least k points");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let sample_cap = k * MAX_POINTS_PER_CENTROID;
    let sampled;
    let points: &[f32] = if n > sample_cap {
        let picks = rand::seq::index::sample(&mut rng, n, sample_cap).into_vec();
        let mut picks = picks;
        picks.sort_unstable();
        sampled = picks
            .iter()
            .flat_map(|&i| matrix[i * dim..(i + 1) * dim].iter().copied())
            .collect::<Vec<f32>>();
        &sampled
    } else {
        matrix
    };
    let m = points.len() / dim;

    let mut centroids = kmeans_pp(points, dim, k, &mut rng);
    let mut assign = vec![(0usize, 0f32); m];
    for _ in 0..KMEANS_ITERATIONS {
        assign = points.par_chunks_exact(dim).map(|p| nearest(p, &centroids, dim)).collect();
        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &(c, _)) in points.chunks_exact(dim).zip(&assign) {
            counts[c] += 1;
            for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
                *s += x as f64;
            }
        }
        // Empty cells are reseeded with the worst-served points, in order.
        let mut worst: Vec<usize> = (0..m).collect();
        worst.sort_by(|&a, &b| assign[a].1.total_cmp(&assign[b].1).then(a.cmp(&b)));
        let mut next_worst = worst.into_iter();
        for c in 0..k {
            let slot = &mut centroids[c * dim..(c + 1) * dim];
            if counts[c] == 0 {
                if let Some(p) = next_worst.next() {
                    slot.copy_from_slice(&points[p * dim..(p + 1) * dim]);
                }
                continue;
            }
            let mut mean: Vec<f32> = sums[c * dim..(c + 1) * dim].iter().map(|&s| s as f32).collect();
            if normalize_in_place(&mut mean) {
                slot.copy_from_slice(&mean);
            }
        }
    }
    drop(assign);
    centroids
}

/// Assigns every row to its nearest centroid; lists hold ascending rows.
pub(crate) fn assign_lists(matrix: &[f32], dim: usize, centroids: &[f32]) -> Vec<Vec<u32>> {
    let k = centroids.len() / dim;
    let owners: Vec<usize> = matrix.par_chunks_exact(dim).map(|p| nearest(p, centroids, dim).0).collect();
    let mut lists = vec![Vec::new(); k];
    for (row, &c) in owners.iter().enumerate() {
        lists[c].push(row as u32);
    }
    lists
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vindex::tests::random_unit;

    #[test]
    fn deterministic_for_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m: Vec<f32> = (0..300).flat_map(|_| random_unit(&mut rng, 8)).collect();
        assert_eq!(train_centroids(&m, 8, 10, 42), train_centroids(&m, 8, 10, 42));
        assert_ne!(train_centroids(&m, 8, 10, 42), train_centroids(&m, 8, 10, 43));
    }

    #[test]
    fn separated_clusters_are_found() {
        // Four tight clusters around the axes.
        let dim = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = Vec::new();
        for i in 0..200 {
            let mut v = vec![0f32; dim];
            v[i % 4] = 1.0;
            for x in v.iter_mut() {
                *x += rng.gen_range(-0.05..0.05);
            }
            normalize_in_place(&mut v);
            m.extend(v);
        }
        let c = train_centroids(&m, dim, 4, 9);
        let lists = assign_lists(&m, dim, &c);
        let mut sizes: Vec<usize> = lists.iter().map(|l| l.len()).collect();
        sizes.sort();
        assert_eq!(sizes, vec![50, 50, 50, 50]);
        for centroid in c.chunks_exact(dim) {
            assert!(centroid.iter().any(|&x| x > 0.99));
        }
    }

    #[test]
    fn k_equal_n_gives_singletons() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m: Vec<f32> = (0..6).flat_map(|_| random_unit(&mut rng, 5)).collect();
        let c = train_centroids(&m, 5, 6, 1);
        let lists = assign_lists(&m, 5, &c);
        assert!(lists.iter().all(|l| l.len() == 1));
    }
}
