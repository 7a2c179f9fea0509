//! Lloyd's k-means with k-means++ seeding, used for the fixed-cluster variant
//! of the spectral operators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest(centroids: &[Vec<f64>], point: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(c, point);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Clusters `points` (rows of equal length) into `m` groups.
pub fn kmeans(points: &[Vec<f64>], m: usize, iters: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if points.is_empty() {
        return Err(Error::Config("k-means on an empty sample".into()));
    }
    if m == 0 || m > points.len() {
        return Err(Error::Config(format!("k-means: {m} clusters for {} points", points.len())));
    }
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding.
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut idx = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, centroids.last().unwrap()));
        }
    }

    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..iters {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(points) {
            let n = nearest(&centroids, p);
            changed |= *a != n;
            *a = n;
        }
        let mut sums = vec![vec![0.0; dim]; m];
        let mut counts = vec![0usize; m];
        for (&a, p) in assign.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for k in 0..m {
            if counts[k] == 0 {
                // Re-seed an empty cluster from the point farthest from its centroid.
                let far = (0..points.len())
                    .max_by(|&i, &j| {
                        let di = dist2(&points[i], &centroids[assign[i]]);
                        let dj = dist2(&points[j], &centroids[assign[j]]);
                        di.partial_cmp(&dj).unwrap().then(j.cmp(&i))
                    })
                    .unwrap();
                centroids[k] = points[far].clone();
                assign[far] = k;
                changed = true;
            } else {
                centroids[k] = sums[k].iter().map(|s| s / counts[k] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    Ok(centroids)
}
