//! Lloyd's algorithm with k-means++ seeding.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{AsotError, Matrix, Result};

pub const MAX_ITERS: usize = 100;
pub const SHIFT_TOL: f64 = 1e-6;
/// Independent seedings tried; the lowest-inertia result is kept.
pub const N_INIT: usize = 10;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_seeds(points: &Matrix, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = points.nrows();
    let row = |i: usize| points.row(i).to_slice().expect("standard layout");
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // All remaining points coincide with a centre: take unused indices.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), row(next)));
        }
    }
    chosen
}

fn nearest(p: &[f64], centroids: &Matrix) -> (usize, f64) {
    (0..centroids.nrows())
        .map(|c| (c, sq_dist(p, centroids.row(c).to_slice().expect("standard layout"))))
        .fold((0, f64::INFINITY), |best, (c, dist)| if dist < best.1 { (c, dist) } else { best })
}

/// Clusters the rows of `points` into `k` centroids.
///
/// Each of [`N_INIT`] runs seeds with k-means++, then does at most
/// [`MAX_ITERS`] Lloyd iterations, stopping early once no centroid moves by
/// more than [`SHIFT_TOL`]. An empty cluster keeps its previous centroid.
pub fn kmeans(points: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<Matrix> {
    let n = points.nrows();
    if k == 0 {
        return Err(AsotError::invalid("k-means needs k >= 1"));
    }
    if n < k {
        return Err(AsotError::invalid(format!("k-means needs at least {k} points, got {n}")));
    }
    let points = points.as_standard_layout().into_owned();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Matrix)> = None;
    for _ in 0..N_INIT {
        let (inertia, centroids) = lloyd(&points, k, &mut rng);
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, centroids));
        }
    }
    Ok(best.expect("at least one run").1)
}

fn lloyd(points: &Matrix, k: usize, rng: &mut impl Rng) -> (f64, Matrix) {
    let (n, d) = points.dim();
    let seeds = plus_plus_seeds(points, k, rng);
    let mut centroids = Array2::from_shape_fn((k, d), |(c, j)| points[[seeds[c], j]]);
    let mut assign = vec![0usize; n];
    for _ in 0..MAX_ITERS {
        for (i, a) in assign.iter_mut().enumerate() {
            *a = nearest(points.row(i).to_slice().expect("standard layout"), &centroids).0;
        }
        let mut sums = Matrix::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            let mut s = sums.row_mut(a);
            s += &points.row(i);
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let mean = sums.row(c).mapv(|v| v / counts[c] as f64);
            shift = shift.max(sq_dist(&mean.to_vec(), centroids.row(c).to_slice().unwrap()).sqrt());
            centroids.row_mut(c).assign(&mean);
        }
        if shift < SHIFT_TOL {
            break;
        }
    }
    let inertia = points
        .outer_iter()
        .map(|p| nearest(p.to_slice().expect("standard layout"), &centroids).1)
        .sum();
    (inertia, centroids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::StandardNormal;

    #[test]
    fn separated_blobs() {
        let means = array![[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let per = 200;
        let pts = Array2::from_shape_fn((4 * per, 2), |(i, j)| {
            means[[i / per, j]] + 0.5 * rng.sample::<f64, _>(StandardNormal)
        });
        let c = kmeans(pts.view(), 4, 1).unwrap();
        for m in means.outer_iter() {
            let best = c
                .outer_iter()
                .map(|r| sq_dist(&r.to_vec(), &m.to_vec()).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.1, "blob mean {m} missed by {best}");
        }
    }

    #[test]
    fn k_equals_pool_size() {
        let pts = array![[0.0, 1.0], [5.0, 5.0], [-3.0, 2.0]];
        let c = kmeans(pts.view(), 3, 0).unwrap();
        let mut got: Vec<Vec<f64>> = c.outer_iter().map(|r| r.to_vec()).collect();
        let mut want: Vec<Vec<f64>> = pts.outer_iter().map(|r| r.to_vec()).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
    }

    #[test]
    fn duplicates_single_cluster() {
        let pts = array![[2.0, -1.0], [2.0, -1.0], [2.0, -1.0]];
        assert_eq!(kmeans(pts.view(), 1, 9).unwrap(), array![[2.0, -1.0]]);
    }

    #[test]
    fn too_few_points() {
        assert!(kmeans(array![[1.0]].view(), 2, 0).is_err());
    }
}
