//! Lloyd's k-means with k-means++ seeding, used separately on the rows and
//! the columns of a data matrix to initialize the label search.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::model::{DataMatrix, LabelAssignment};
use crate::rng::{derive_seed, rng_from_seed, Rng};

/// Squared distance with four independent accumulators so the loop
/// vectorizes; the summation order is fixed, so results are reproducible.
#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    for (x, y) in ca.zip(cb) {
        for t in 0..4 {
            let d = x[t] - y[t];
            acc[t] += d * d;
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Cluster the `npts` points stored row-major in `points` (each of length
/// `dim`) into `k` non-empty groups.
pub fn kmeans(points: &[f64], dim: usize, k: usize, iters: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::Dimension(format!(
            "{} values do not form points of dimension {dim}",
            points.len()
        )));
    }
    let npts = points.len() / dim;
    if k == 0 || k > npts {
        return Err(Error::InvalidInput(format!(
            "need 1 <= k <= {npts} points, got k={k}"
        )));
    }
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut centroids = plus_plus_seeds(points, dim, k, rng);
    let mut labels = vec![usize::MAX; npts];
    let mut dist = vec![0.0; npts];

    for _ in 0..iters.max(1) {
        let mut changed = false;
        for i in 0..npts {
            let p = point(i);
            let (best, d) = (0..k)
                .map(|c| (c, sq_dist(p, &centroids[c * dim..(c + 1) * dim])))
                .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
            dist[i] = d;
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        changed |= repair_empty(points, dim, k, &mut labels, &mut dist, &mut centroids);
        if !changed {
            break;
        }
        update_centroids(points, dim, k, &labels, &mut centroids);
    }
    Ok(labels)
}

fn plus_plus_seeds(points: &[f64], dim: usize, k: usize, rng: &mut Rng) -> Vec<f64> {
    let npts = points.len() / dim;
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..npts);
    centroids.extend_from_slice(point(first));
    let mut d2: Vec<f64> = (0..npts).map(|i| sq_dist(point(i), point(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = npts - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All points coincide with a chosen centre.
            rng.random_range(0..npts)
        };
        centroids.extend_from_slice(point(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), point(pick)));
        }
    }
    centroids
}

fn update_centroids(points: &[f64], dim: usize, k: usize, labels: &[usize], centroids: &mut [f64]) {
    let mut counts = vec![0usize; k];
    centroids.iter_mut().for_each(|c| *c = 0.0);
    for (i, &g) in labels.iter().enumerate() {
        counts[g] += 1;
        let dst = &mut centroids[g * dim..(g + 1) * dim];
        for (c, &v) in dst.iter_mut().zip(&points[i * dim..(i + 1) * dim]) {
            *c += v;
        }
    }
    for (g, &cnt) in counts.iter().enumerate() {
        if cnt > 0 {
            let inv = 1.0 / cnt as f64;
            centroids[g * dim..(g + 1) * dim].iter_mut().for_each(|c| *c *= inv);
        }
    }
}

/// Give every empty cluster the point farthest from its own centroid
/// (taken from a cluster that keeps at least one member). Returns whether
/// anything moved.
fn repair_empty(
    points: &[f64],
    dim: usize,
    k: usize,
    labels: &mut [usize],
    dist: &mut [f64],
    centroids: &mut [f64],
) -> bool {
    let mut counts = vec![0usize; k];
    for &g in labels.iter() {
        counts[g] += 1;
    }
    let mut moved = false;
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let donor = (0..labels.len())
            .filter(|&i| counts[labels[i]] >= 2)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dist[b] >= dist[i] => Some(b),
                _ => Some(i),
            })
            .expect("k <= npts guarantees a cluster with two members");
        counts[labels[donor]] -= 1;
        counts[empty] += 1;
        labels[donor] = empty;
        dist[donor] = 0.0;
        centroids[empty * dim..(empty + 1) * dim]
            .copy_from_slice(&points[donor * dim..(donor + 1) * dim]);
        moved = true;
    }
    moved
}

/// Within-cluster sum of squares.
pub fn inertia(points: &[f64], dim: usize, k: usize, labels: &[usize]) -> f64 {
    let mut centroids = vec![0.0; k * dim];
    update_centroids(points, dim, k, labels, &mut centroids);
    labels
        .iter()
        .enumerate()
        .map(|(i, &g)| sq_dist(&points[i * dim..(i + 1) * dim], &centroids[g * dim..(g + 1) * dim]))
        .sum()
}

/// Best of `starts` independent k-means runs by inertia; ties keep the
/// earliest run.
pub fn kmeans_best(points: &[f64], dim: usize, k: usize, iters: usize, starts: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..starts.max(1) {
        let labels = kmeans(points, dim, k, iters, rng)?;
        let w = inertia(points, dim, k, &labels);
        if best.as_ref().is_none_or(|(bw, _)| w < *bw) {
            best = Some((w, labels));
        }
    }
    Ok(best.expect("at least one start").1)
}

/// k-means on the rows (as length-`n` vectors) and separately on the
/// columns (as length-`m` vectors), keeping the best of `starts` seedings
/// on each side.
pub fn kmeans_init(x: &DataMatrix, k: usize, l: usize, seed: u64, iters: usize, starts: usize) -> Result<LabelAssignment> {
    if k == 0 || l == 0 || k > x.nrows() || l > x.ncols() {
        return Err(Error::InvalidInput(format!(
            "need 1 <= K <= m and 1 <= L <= n, got K={k}, L={l} for a {}x{} matrix",
            x.nrows(),
            x.ncols()
        )));
    }
    let mut row_rng = rng_from_seed(derive_seed(seed, 0));
    let rows = kmeans_best(x.as_slice(), x.ncols(), k, iters, starts, &mut row_rng)?;
    let xt = x.transposed();
    let mut col_rng = rng_from_seed(derive_seed(seed, 1));
    let cols = kmeans_best(xt.as_slice(), x.nrows(), l, iters, starts, &mut col_rng)?;
    LabelAssignment::new(rows, cols, k, l)
}
