//! Seeded mini-batch k-means with k-means++ initialization.

use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SelectorError;

pub const ITERATIONS: usize = 20;
pub const MAX_BATCH: usize = 1024;

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Index and squared distance of the nearest centroid; ties go to the lowest
/// index.
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

pub fn distinct_count(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|x| x.to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
}

pub fn fit(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansFit, SelectorError> {
    let distinct = distinct_count(points);
    if k == 0 || k > distinct {
        return Err(SelectorError::TooManyClusters { k, distinct });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(points, k, &mut rng);
    let mut counts = vec![0u64; k];
    let batch = points.len().min(MAX_BATCH);

    for _ in 0..ITERATIONS {
        let picked = index::sample(&mut rng, points.len(), batch).into_vec();
        let nearest_of: Vec<usize> = picked
            .iter()
            .map(|&i| nearest(&points[i], &centroids).0)
            .collect();
        for (&i, &c) in picked.iter().zip(&nearest_of) {
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            for (m, x) in centroids[c].iter_mut().zip(&points[i]) {
                *m += eta * (x - *m);
            }
        }
    }

    let assignment = points.iter().map(|p| nearest(p, &centroids).0).collect();
    Ok(KMeansFit {
        centroids,
        assignment,
    })
}

fn seed_plus_plus<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, w) in d2.iter().enumerate() {
            if *w <= 0.0 {
                continue;
            }
            pick = Some(i);
            if target < *w {
                break;
            }
            target -= w;
        }
        // k <= distinct guarantees a point with positive distance remains
        let i = pick.expect("a point away from every centroid");
        centroids.push(points[i].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &points[i]));
        }
    }
    centroids
}
