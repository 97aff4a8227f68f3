//! Evaluation metrics and clustering of learned trajectories.

use std::fmt::Write as _;

use rand::Rng as _;

use crate::data::{Dataset, EntryIndex};
use crate::error::{Error, Result};
use crate::graph::EmbeddingState;
use crate::matrix::Matrix;
use crate::model::Model;
use crate::par;
use crate::rng::Rng;

pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITERS: usize = 200;
pub const KMEANS_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// In original units.
    pub rmse: f64,
    /// RMSE divided by the training value std.
    pub nrmse: f64,
    pub count: usize,
    /// Predicted mean per observation, original units.
    pub predictions: Vec<f64>,
    /// `prediction - target` per observation.
    pub residuals: Vec<f64>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        format!("rmse,nrmse,count\n{},{},{}\n", self.rmse, self.nrmse, self.count)
    }
}

/// Scores `model` on raw (unstandardized) observations.
pub fn evaluate(model: &Model, test: &Dataset) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
    }
    if test.order() != model.order() {
        return Err(Error::InvalidArgument(format!(
            "data has {} modes but the model has {}",
            test.order(),
            model.order()
        )));
    }
    let queries: Vec<(EntryIndex, f64)> = test.observations().iter().map(|o| (o.index.clone(), o.time)).collect();
    let preds = model.predict(&queries)?;
    let predictions: Vec<f64> = preds.iter().map(|p| p.mean).collect();
    let residuals: Vec<f64> = predictions.iter().zip(test.observations()).map(|(p, o)| p - o.value).collect();
    let rmse = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
    Ok(EvalReport { rmse, nrmse: rmse / model.standardizer.value_std, count: residuals.len(), predictions, residuals })
}

/// Per-entity features of mode `k`: its embedding at each snapshot, concatenated.
pub fn trajectory_features(snapshots: &[EmbeddingState], k: usize) -> Matrix {
    let Some(first) = snapshots.first() else {
        return Matrix::zeros(0, 0);
    };
    let (d, r) = (first.dims()[k], first.rank());
    Matrix::from_fn(d, snapshots.len() * r, |j, c| snapshots[c / r].entity(k, j)[c % r])
}

/// Embedding trajectories of every mode on `count` evenly spaced raw times in `[start, end]`.
pub fn trajectory_grid(model: &Model, start: f64, end: f64, count: usize) -> Result<(Vec<f64>, Vec<Matrix>)> {
    if count == 0 || !(end >= start) || start < 0.0 {
        return Err(Error::InvalidArgument(format!("bad grid [{start}, {end}] with {count} points")));
    }
    let raw: Vec<f64> = (0..count)
        .map(|i| if count == 1 { start } else { start + (end - start) * i as f64 / (count - 1) as f64 })
        .collect();
    let model_times: Vec<f64> = raw.iter().map(|&t| model.standardizer.time(t)).collect();
    let snaps = model.snapshot_embeddings(&model_times)?;
    Ok((raw, (0..model.order()).map(|k| trajectory_features(&snaps, k)).collect()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    /// `k x p`
    pub centroids: Matrix,
    pub wcss: f64,
    /// WCSS after every assignment step of the winning restart.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    (0..centroids.rows()).fold((0, f64::INFINITY), |(bi, bd), c| {
        let d = sq_dist(point, centroids.row(c));
        if d < bd {
            (c, d)
        } else {
            (bi, bd)
        }
    })
}

/// k-means++ seeding.
fn seed_centroids(points: &Matrix, k: usize, rng: &mut Rng) -> Matrix {
    let n = points.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    Matrix::from_fn(k, points.cols(), |c, j| points.get(chosen[c], j))
}

/// Lloyd iterations from the given centroids.
pub fn lloyd(points: &Matrix, mut centroids: Matrix) -> KMeans {
    let (n, p, k) = (points.rows(), points.cols(), centroids.rows());
    let mut labels = vec![0; n];
    let mut history = Vec::new();
    for _ in 0..KMEANS_MAX_ITERS {
        let mut wcss = 0.0;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (c, d) = nearest(points.row(i), &centroids);
            labels[i] = c;
            dists[i] = d;
            wcss += d;
        }
        history.push(wcss);
        let mut sums = Matrix::zeros(k, p);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, &x) in sums.row_mut(labels[i]).iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        let mut next = Matrix::zeros(k, p);
        for c in 0..k {
            if counts[c] > 0 {
                for (o, &s) in next.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *o = s / counts[c] as f64;
                }
            } else {
                // Reseed an empty cluster at the point farthest from its centroid.
                let far = (0..n).fold(0, |b, i| if dists[i] > dists[b] { i } else { b });
                next.row_mut(c).copy_from_slice(points.row(far));
                dists[far] = 0.0;
            }
        }
        let moved = (0..k).map(|c| sq_dist(next.row(c), centroids.row(c)).sqrt()).fold(0.0, f64::max);
        centroids = next;
        if moved < KMEANS_TOL {
            break;
        }
    }
    let mut wcss = 0.0;
    for i in 0..n {
        let (c, d) = nearest(points.row(i), &centroids);
        labels[i] = c;
        wcss += d;
    }
    history.push(wcss);
    KMeans { labels, centroids, wcss, history }
}

/// Best of [`KMEANS_RESTARTS`] seeded restarts by within-cluster sum of squares.
pub fn kmeans(points: &Matrix, k: usize, rng: &mut Rng) -> Result<KMeans> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} must be in [1, {n}]")));
    }
    let seeds: Vec<u64> = (0..KMEANS_RESTARTS).map(|_| rng.random()).collect();
    let work = n * points.cols() * k * KMEANS_MAX_ITERS;
    let runs = par::map_slice(&seeds, work, |&s| {
        let mut r = <Rng as rand::SeedableRng>::seed_from_u64(s);
        lloyd(points, seed_centroids(points, k, &mut r))
    });
    Ok(runs.into_iter().reduce(|best, r| if r.wcss < best.wcss { r } else { best }).expect("restarts"))
}

/// The `k` in `[2, k_max]` with the largest discrete second difference of WCSS.
pub fn elbow_select(points: &Matrix, k_max: usize, rng: &mut Rng) -> Result<usize> {
    let n = points.rows();
    if k_max < 2 || n < 2 {
        return Err(Error::InvalidArgument(format!("elbow needs k_max >= 2 and >= 2 points, got {k_max} and {n}")));
    }
    if k_max == 2 {
        return Ok(2);
    }
    let k_max = k_max.min(n);
    // wcss[k] for k in 1..=k_max + 1; beyond n every point is its own cluster.
    let mut wcss = vec![0.0; k_max + 2];
    for (k, w) in wcss.iter_mut().enumerate().skip(1) {
        *w = if k <= n { kmeans(points, k, rng)?.wcss } else { 0.0 };
    }
    let mut best = (2, f64::NEG_INFINITY);
    for k in 2..=k_max {
        let curv = wcss[k - 1] - 2.0 * wcss[k] + wcss[k + 1];
        if curv > best.1 {
            best = (k, curv);
        }
    }
    Ok(best.0)
}

/// Fraction of points whose cluster's majority true label is their own.
pub fn cluster_purity<A: Ord + Copy, B: Ord + Copy>(labels: &[A], truth: &[B]) -> Result<f64> {
    if labels.len() != truth.len() || labels.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "purity needs equal non-empty labelings, got {} and {}",
            labels.len(),
            truth.len()
        )));
    }
    let mut table = std::collections::BTreeMap::<A, std::collections::BTreeMap<B, usize>>::new();
    for (&a, &b) in labels.iter().zip(truth) {
        *table.entry(a).or_default().entry(b).or_default() += 1;
    }
    let hits: usize = table.values().map(|row| row.values().copied().max().unwrap_or(0)).sum();
    Ok(hits as f64 / labels.len() as f64)
}

/// Rows of `mode,entity,time,label`.
pub fn assignments_csv(rows: &[(usize, usize, f64, usize)]) -> String {
    let mut out = String::from("mode,entity,time,label\n");
    for (m, e, t, l) in rows {
        let _ = writeln!(out, "{m},{e},{t},{l}");
    }
    out
}
