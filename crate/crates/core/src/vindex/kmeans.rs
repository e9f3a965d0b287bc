//! Lloyd k-means with greedy k-means++ seeding.
//!
//! Two flavours are needed: squared-L2 for product-quantizer codebooks and
//! spherical (max inner product, centroids renormalized) for the coarse
//! quantizer. Empty clusters are re-seeded with the member of the largest
//! cluster that lies farthest from its centroid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    L2,
    /// Assign by largest dot product; centroids are kept at unit norm.
    InnerProduct,
}

#[derive(Debug, Clone)]
pub struct KMeansParams {
    pub k: usize,
    pub iterations: usize,
    pub seed: u64,
    pub metric: Metric,
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// `k * dim`, row-major.
    pub centroids: Vec<f32>,
    pub assignments: Vec<u32>,
    /// Mean squared distance of each point to its assigned centroid, one
    /// entry per iteration, measured right after the assignment step.
    pub mse_trace: Vec<f64>,
}

#[inline]
fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).fold(0.0f32, |s, (x, y)| {
        let d = x - y;
        s + d * d
    })
}

#[inline]
fn sq_dist64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

/// Index of the best centroid for `x` (ties to the lowest index) and its score.
#[inline]
pub fn nearest(x: &[f32], centroids: &[f32], dim: usize, metric: Metric) -> (usize, f32) {
    let mut best = (0usize, f32::NAN);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let s = match metric {
            Metric::L2 => -sq_dist(x, c),
            Metric::InnerProduct => super::dot(x, c),
        };
        if j == 0 || s > best.1 {
            best = (j, s);
        }
    }
    best
}

fn normalize(v: &mut [f32]) {
    let n = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v {
            *x = (*x as f64 / n) as f32;
        }
    }
}

/// Greedy k-means++: each new centroid is the best of `2 + ln k` D²-weighted
/// draws, judged by the resulting total squared distance.
fn plus_plus_init(data: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let trials = 2 + (k as f64).ln() as usize;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist64(row(i), row(first))).collect();
    while centroids.len() < k * dim {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            // every point coincides with a chosen centroid
            centroids.extend_from_slice(row(0));
            continue;
        }
        let mut best: Option<(f64, Vec<f64>, usize)> = None;
        for _ in 0..trials {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            let c = row(pick);
            let next: Vec<f64> = d2
                .par_iter()
                .enumerate()
                .map(|(i, &d)| d.min(sq_dist64(&data[i * dim..(i + 1) * dim], c)))
                .collect();
            let potential: f64 = next.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, next, pick));
            }
        }
        let (_, next, pick) = best.unwrap();
        centroids.extend_from_slice(row(pick));
        d2 = next;
    }
    centroids
}

pub fn kmeans(data: &[f32], dim: usize, params: &KMeansParams) -> KMeansResult {
    let n = data.len() / dim;
    let k = params.k;
    assert!(n >= 1 && k >= 1, "k-means needs data and k >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = plus_plus_init(data, dim, k, &mut rng);
    if params.metric == Metric::InnerProduct {
        centroids.chunks_exact_mut(dim).for_each(normalize);
    }
    let mut assignments = vec![0u32; n];
    let mut mse_trace = Vec::with_capacity(params.iterations);

    for _ in 0..params.iterations.max(1) {
        assignments
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, a)| *a = nearest(&data[i * dim..(i + 1) * dim], &centroids, dim, params.metric).0 as u32);
        let err: f64 = (0..n)
            .into_par_iter()
            .map(|i| {
                let j = assignments[i] as usize;
                sq_dist64(&data[i * dim..(i + 1) * dim], &centroids[j * dim..(j + 1) * dim])
            })
            .sum();
        mse_trace.push(err / n as f64);

        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            let a = a as usize;
            counts[a] += 1;
            for (s, &x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(&data[i * dim..(i + 1) * dim]) {
                *s += x as f64;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let c = &mut centroids[j * dim..(j + 1) * dim];
            for (cv, s) in c.iter_mut().zip(&sums[j * dim..(j + 1) * dim]) {
                *cv = (s / counts[j] as f64) as f32;
            }
            if params.metric == Metric::InnerProduct {
                normalize(c);
            }
        }
        reseed_empty(data, dim, &mut centroids, &mut assignments, &mut counts, params.metric);
    }
    // final assignment against the last centroids
    assignments
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, a)| *a = nearest(&data[i * dim..(i + 1) * dim], &centroids, dim, params.metric).0 as u32);
    KMeansResult { centroids, assignments, mse_trace }
}

fn reseed_empty(
    data: &[f32],
    dim: usize,
    centroids: &mut [f32],
    assignments: &mut [u32],
    counts: &mut [usize],
    metric: Metric,
) {
    let k = counts.len();
    for j in 0..k {
        if counts[j] != 0 {
            continue;
        }
        let largest = (0..k).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap();
        if counts[largest] < 2 {
            return;
        }
        let c = centroids[largest * dim..(largest + 1) * dim].to_vec();
        let mut far = (usize::MAX, f64::NEG_INFINITY);
        for (i, &a) in assignments.iter().enumerate() {
            if a as usize == largest {
                let d = sq_dist64(&data[i * dim..(i + 1) * dim], &c);
                if d > far.1 {
                    far = (i, d);
                }
            }
        }
        let p = far.0;
        centroids[j * dim..(j + 1) * dim].copy_from_slice(&data[p * dim..(p + 1) * dim]);
        if metric == Metric::InnerProduct {
            normalize(&mut centroids[j * dim..(j + 1) * dim]);
        }
        assignments[p] = j as u32;
        counts[largest] -= 1;
        counts[j] = 1;
    }
}
