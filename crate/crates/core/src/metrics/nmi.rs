//! Normalised mutual information of a k-means clustering against labels.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(a; b) / sqrt(H(a)·H(b))`.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return shape_err(format!("{} vs {} assignments", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::Empty("NMI of no points".into()));
    }
    let n = a.len() as f64;
    let mut ca: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cb: BTreeMap<usize, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        *joint.entry((x, y)).or_default() += 1;
    }
    let (ha, hb) = (entropy(ca.values().copied(), n), entropy(cb.values().copied(), n));
    if ha == 0.0 || hb == 0.0 {
        return Err(Error::DegenerateClustering(
            "a single cluster or a single label carries no information".into(),
        ));
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c as f64 / n;
            pxy * (pxy * n * n / (ca[&x] as f64 * cb[&y] as f64)).ln()
        })
        .sum();
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd iterations from a k-means++ start; `points` is `[n, d]` row-major.
pub fn kmeans(points: &[f64], d: usize, k: usize, seed: u64, max_iter: usize) -> Result<Vec<usize>> {
    if d == 0 || points.len() % d != 0 {
        return shape_err(format!("{} values with dimension {d}", points.len()));
    }
    let n = points.len() / d;
    if k == 0 || n <= k {
        return Err(Error::InvalidConfig(format!("k-means needs more points ({n}) than clusters ({k})")));
    }
    let row = |i: usize| &points[i * d..(i + 1) * d];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<f64> = row(rng.gen_range(0..n)).to_vec();
    let mut best: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centroids[..d])).collect();
    for _ in 1..k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in best.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centroids.extend_from_slice(row(pick));
        let c = centroids.len() / d - 1;
        for i in 0..n {
            best[i] = best[i].min(sq_dist(row(i), &centroids[c * d..(c + 1) * d]));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let (mut arg, mut min) = (0, f64::INFINITY);
            for c in 0..k {
                let dist = sq_dist(row(i), &centroids[c * d..(c + 1) * d]);
                if dist < min {
                    min = dist;
                    arg = c;
                }
            }
            if assign[i] != arg {
                assign[i] = arg;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for j in 0..d {
                sums[assign[i] * d + j] += row(i)[j];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(row(a), &centroids[assign[a] * d..(assign[a] + 1) * d]);
                        let db = sq_dist(row(b), &centroids[assign[b] * d..(assign[b] + 1) * d]);
                        da.total_cmp(&db)
                    })
                    .unwrap();
                centroids[c * d..(c + 1) * d].copy_from_slice(row(far));
            } else {
                for j in 0..d {
                    centroids[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            }
        }
    }
    Ok(assign)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmiReport {
    pub per_level: Vec<f64>,
    pub mean: f64,
}

/// Cluster `embeddings` once per level with `k = clusters[level]` and score
/// the assignment against that level's labels.
pub fn knn_nmi(
    embeddings: &[f64],
    d: usize,
    labels_per_level: &[Vec<usize>],
    clusters: &[usize],
    seed: u64,
) -> Result<NmiReport> {
    if labels_per_level.len() != clusters.len() || labels_per_level.is_empty() {
        return shape_err("one cluster count per level is required".to_string());
    }
    let mut per_level = Vec::with_capacity(clusters.len());
    for (level, (labels, &k)) in labels_per_level.iter().zip(clusters).enumerate() {
        let assign = kmeans(embeddings, d, k, seed.wrapping_add(level as u64), 100)?;
        per_level.push(nmi(&assign, labels)?);
    }
    let mean = per_level.iter().sum::<f64>() / per_level.len() as f64;
    Ok(NmiReport { per_level, mean })
}
