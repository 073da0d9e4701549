//! Lloyd's algorithm with k-means++ seeding and seeded restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut pick = points.len() - 1;
            for (i, di) in d.iter().enumerate() {
                if u < *di {
                    pick = i;
                    break;
                }
                u -= di;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (di, p) in d.iter_mut().zip(points) {
            *di = di.min(dist2(p, centroids.last().unwrap()));
        }
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iters: usize) -> KMeans {
    let dim = points[0].len();
    let mut assignments = vec![usize::MAX; points.len()];
    for _ in 0..max_iters {
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (k, _) = nearest(p, &centroids);
            if *a != k {
                *a = k;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (a, p) in assignments.iter().zip(points) {
            counts[*a] += 1;
            for (s, v) in sums[*a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (k, c) in centroids.iter_mut().enumerate() {
            // an emptied cluster keeps its previous centre
            if counts[k] > 0 {
                *c = sums[k].iter().map(|s| s / counts[k] as f64).collect();
            }
        }
    }
    let inertia = points.iter().zip(&assignments).map(|(p, &a)| dist2(p, &centroids[a])).sum();
    KMeans { centroids, assignments, inertia }
}

/// Best of `restarts` k-means++ runs by inertia; `k` is capped at the number of points.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, max_iters: usize, seed: u64) -> KMeans {
    if points.is_empty() || k == 0 {
        return KMeans { centroids: Vec::new(), assignments: vec![0; points.len()], inertia: 0.0 };
    }
    let k = k.min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(points, plus_plus(points, k, &mut rng), max_iters);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    best.unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_blobs_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let centres = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut pts = Vec::new();
        for c in &centres {
            for _ in 0..30 {
                pts.push(vec![c[0] + rng.random_range(-1.0..1.0), c[1] + rng.random_range(-1.0..1.0)]);
            }
        }
        let km = kmeans(&pts, 3, 10, 100, 1);
        for blob in 0..3 {
            let label = km.assignments[blob * 30];
            assert!(km.assignments[blob * 30..(blob + 1) * 30].iter().all(|&a| a == label));
        }
        let labels: std::collections::HashSet<_> = km.assignments.iter().collect();
        assert_eq!(labels.len(), 3);
        assert_eq!(kmeans(&pts, 3, 10, 100, 1), km);
    }

    #[test]
    fn more_clusters_than_points() {
        let pts = vec![vec![0.0], vec![1.0]];
        let km = kmeans(&pts, 5, 3, 10, 0);
        assert_eq!(km.centroids.len(), 2);
        assert_eq!(km.inertia, 0.0);
    }
}
