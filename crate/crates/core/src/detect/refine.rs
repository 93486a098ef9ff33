//! Exhaustive two-segment search inside each candidate cluster.

use serde::{Deserialize, Serialize};

use super::lasso::{BlockPartition, ThetaEstimate};
use crate::design::Design;

/// Open search window `(lo, hi)` for one cluster, in 1-based days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchWindow {
    pub lo: usize,
    pub hi: usize,
    /// Days `[data_lo, data_hi)` entering the objective.
    pub data_lo: usize,
    pub data_hi: usize,
    pub clipped: bool,
}

/// Result of refining each cluster to a single day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub points: Vec<usize>,
    pub windows: Vec<SearchWindow>,
    /// Local coefficient estimates `B_1..B_{m+1}` (scaled units).
    pub local: Vec<Vec<f64>>,
}

/// Search windows before clipping: `(c - b, c + b)` around a lone candidate,
/// `(min C, max C)` otherwise; neighbouring windows that overlap are cut at
/// the midpoint between the clusters.
pub fn search_windows(clusters: &[Vec<usize>], partition: &BlockPartition) -> Vec<SearchWindow> {
    let b = partition.block_size as i64;
    let n = partition.n_days() as i64;
    let mut raw: Vec<(i64, i64, i64, i64)> = clusters
        .iter()
        .map(|c| {
            let lo = *c.first().expect("non-empty cluster") as i64;
            let hi = *c.last().expect("non-empty cluster") as i64;
            let (wl, wu) = if c.len() == 1 { (lo - b, lo + b) } else { (lo, hi) };
            (wl, wu, lo - b, hi + b)
        })
        .collect();
    for i in 1..raw.len() {
        let (prev_hi, next_lo) = (raw[i - 1].1, raw[i].0);
        if prev_hi - 1 >= next_lo + 1 {
            let left_max = *clusters[i - 1].last().unwrap() as i64;
            let right_min = *clusters[i].first().unwrap() as i64;
            let mid = (left_max + right_min).div_euclid(2);
            raw[i - 1].1 = raw[i - 1].1.min(mid + 1);
            raw[i].0 = raw[i].0.max(mid);
        }
    }
    raw.into_iter()
        .map(|(wl, wu, dl, du)| {
            let lo = wl.max(1);
            let hi = wu.min(n + 1);
            SearchWindow {
                lo: lo as usize,
                hi: hi as usize,
                data_lo: dl.max(1) as usize,
                data_hi: du.min(n + 1) as usize,
                clipped: lo != wl || hi != wu,
            }
        })
        .collect()
}

/// Local levels between clusters: `B_i` sums the increments up to the block
/// halfway between cluster `i-1` and cluster `i`.
pub fn local_estimates(
    clusters: &[Vec<usize>],
    theta: &ThetaEstimate,
    partition: &BlockPartition,
) -> Vec<Vec<f64>> {
    let k = partition.n_blocks();
    // 1-based block numbers of each cluster's extremes.
    let mut bounds: Vec<(usize, usize)> = vec![(1, 1)];
    for c in clusters {
        let first = partition.block_of(*c.first().unwrap()) + 1;
        let last = partition.block_of(*c.last().unwrap()) + 1;
        bounds.push((first, last));
    }
    bounds.push((k, k));
    let levels = theta.levels();
    (1..bounds.len())
        .map(|i| {
            let mid = (bounds[i - 1].1 + bounds[i].0) / 2;
            levels[mid.clamp(1, k) - 1].clone()
        })
        .collect()
}

/// Two-segment squared error of split `s` over days `[lo, hi)`.
pub fn split_cost(design: &Design, lo: usize, hi: usize, s: usize, left: &[f64], right: &[f64]) -> f64 {
    let mut acc = 0.0;
    for t in lo..hi {
        let coef = if t < s { left } else { right };
        acc += design.sq_error(t - 1, coef);
    }
    acc
}

pub fn exhaustive_refine(
    design: &Design,
    clusters: &[Vec<usize>],
    theta: &ThetaEstimate,
    partition: &BlockPartition,
) -> Refinement {
    let windows = search_windows(clusters, partition);
    let local = local_estimates(clusters, theta, partition);
    let mut points = Vec::with_capacity(clusters.len());
    for (i, w) in windows.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for s in w.lo + 1..w.hi {
            let cost = split_cost(design, w.data_lo, w.data_hi, s, &local[i], &local[i + 1]);
            if best.is_none_or(|(_, c)| cost < c) {
                best = Some((s, cost));
            }
        }
        // An empty window after clipping leaves the cluster at its first candidate.
        points.push(best.map_or(clusters[i][0], |(s, _)| s));
    }
    Refinement {
        points,
        windows,
        local,
    }
}
