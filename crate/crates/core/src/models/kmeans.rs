//! k-means++ seeding followed by Lloyd refinement; used to initialise the
//! mixture models.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub max_iter: usize,
    /// Stop once no center moves farther than this (Euclidean).
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { max_iter: 25, tol: 1e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub centers: Array2<f64>,
    pub labels: Vec<usize>,
    pub iterations: usize,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: ArrayView1<f64>, centers: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.outer_iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus(x: ArrayView2<f64>, k: usize, rng: &mut SplitMix64) -> Array2<f64> {
    let n = x.nrows();
    let mut centers = Array2::zeros((k, x.ncols()));
    let first = rng.below(n);
    centers.row_mut(0).assign(&x.row(first));
    let mut d2: Vec<f64> = x.outer_iter().map(|r| sq_dist(r, x.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.below(n)
        };
        centers.row_mut(c).assign(&x.row(pick));
        for (i, r) in x.outer_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, x.row(pick)));
        }
    }
    centers
}

/// Seeds `k` centers with k-means++ and refines them with Lloyd steps.
pub fn kmeans_init(x: ArrayView2<f64>, k: usize, cfg: &KMeansConfig, rng: &mut SplitMix64) -> Result<KMeans> {
    let n = x.nrows();
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    if n < k {
        return Err(Error::NotEnoughSamples { required: k, found: n });
    }
    let mut centers = plus_plus(x, k, rng);
    let mut labels = vec![0usize; n];
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        let mut dist = vec![0.0; n];
        for (i, r) in x.outer_iter().enumerate() {
            let (l, d) = nearest(r, &centers);
            labels[i] = l;
            dist[i] = d;
        }
        let mut sums = Array2::<f64>::zeros(centers.dim());
        let mut counts = vec![0usize; k];
        for (i, r) in x.outer_iter().enumerate() {
            sums.row_mut(labels[i]).scaled_add(1.0, &r);
            counts[labels[i]] += 1;
        }
        let mut next = centers.clone();
        for c in 0..k {
            if counts[c] > 0 {
                next.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            } else {
                // Re-seed an empty cluster at the worst-served point.
                let far = (0..n)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]))
                    .unwrap_or(0);
                next.row_mut(c).assign(&x.row(far));
                dist[far] = 0.0;
            }
        }
        let shift = next
            .outer_iter()
            .zip(centers.outer_iter())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centers = next;
        if shift < cfg.tol {
            break;
        }
    }
    for (i, r) in x.outer_iter().enumerate() {
        labels[i] = nearest(r, &centers).0;
    }
    Ok(KMeans { centers, labels, iterations })
}

/// Per-dimension mean, and population variance floored at `floor`.
pub(crate) fn column_moments(x: ArrayView2<f64>, floor: f64) -> (Array1<f64>, Array1<f64>) {
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let var = x.var_axis(Axis(0), 0.0).mapv(|v| v.max(floor));
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separates_obvious_clusters() {
        let mut rng = SplitMix64::new(3);
        let x = Array2::from_shape_fn((200, 2), |(i, _)| {
            let base = if i < 100 { -10.0 } else { 10.0 };
            base + 0.1 * (i % 7) as f64
        });
        let km = kmeans_init(x.view(), 2, &KMeansConfig::default(), &mut rng).unwrap();
        assert!(km.labels[..100].iter().all(|&l| l == km.labels[0]));
        assert!(km.labels[100..].iter().all(|&l| l == km.labels[100]));
        assert_ne!(km.labels[0], km.labels[100]);
    }

    #[test]
    fn k_equals_n_keeps_each_point() {
        let x = array![[0.0, 0.0], [1.0, 5.0], [9.0, -2.0], [4.0, 4.0]];
        let km = kmeans_init(x.view(), 4, &KMeansConfig::default(), &mut SplitMix64::new(8)).unwrap();
        let mut labels = km.labels.clone();
        labels.sort_unstable();
        assert_eq!(labels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn too_few_points() {
        let x = Array2::<f64>::zeros((3, 2));
        let err = kmeans_init(x.view(), 5, &KMeansConfig::default(), &mut SplitMix64::new(0));
        assert!(matches!(err, Err(Error::NotEnoughSamples { required: 5, found: 3 })));
    }

    #[test]
    fn duplicate_points_do_not_hang() {
        let x = Array2::<f64>::ones((10, 3));
        let km = kmeans_init(x.view(), 3, &KMeansConfig::default(), &mut SplitMix64::new(1)).unwrap();
        assert_eq!(km.labels.len(), 10);
    }
}
