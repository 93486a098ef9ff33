//! Pruning lasso increments with 2-means and a BIC stopping rule.

use serde::{Deserialize, Serialize};

use nalgebra::{DMatrix, DVector};

use super::lasso::{BlockStats, ThetaEstimate};

/// Lloyd's 2-means on scalars, seeded at the minimum and maximum.
/// Returns `true` for members of the cluster with the larger center.
pub fn two_means(values: &[f64]) -> Vec<bool> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut centers = [lo, hi];
    let mut assign: Vec<bool> = values.iter().map(|v| (v - hi).abs() < (v - lo).abs()).collect();
    loop {
        for (k, c) in centers.iter_mut().enumerate() {
            let (sum, cnt) = values
                .iter()
                .zip(&assign)
                .filter(|(_, a)| **a == (k == 1))
                .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
            if cnt > 0 {
                *c = sum / cnt as f64;
            }
        }
        let next: Vec<bool> = values
            .iter()
            .map(|v| (v - centers[1]).abs() < (v - centers[0]).abs())
            .collect();
        if next == assign {
            return assign;
        }
        assign = next;
    }
}

/// Schwarz criterion of the stacked regression with breaks at the kept
/// blocks, each segment refit by least squares. RSS is floored at `1e-12`
/// of the total sum of squares so exact fits tie and the penalty decides.
pub fn bic(stats: &BlockStats, kept: &[usize], n_obs: usize) -> f64 {
    let d = stats.d;
    let mut edges = vec![0];
    edges.extend(kept.iter().copied().filter(|&i| i > 0));
    edges.push(stats.n_blocks());
    let total: f64 = stats.yty.iter().sum();
    let mut rss = 0.0;
    for w in edges.windows(2) {
        let mut h = DMatrix::<f64>::zeros(d, d);
        let mut g = DVector::<f64>::zeros(d);
        let mut yy = 0.0;
        for j in w[0]..w[1] {
            h += DMatrix::from_row_slice(d, d, &stats.xtx[j]);
            g += DVector::from_column_slice(&stats.xty[j]);
            yy += stats.yty[j];
        }
        let b = h.svd(true, true).solve(&g, 1e-12).unwrap_or_else(|_| DVector::zeros(d));
        rss += (yy - b.dot(&g)).max(0.0);
    }
    let nobs = n_obs as f64;
    let params = (d * (kept.len() + 1)) as f64;
    nobs * (rss.max(1e-12 * total).max(f64::MIN_POSITIVE) / nobs).ln() + params * nobs.ln()
}

/// Trace of the thresholding loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTrace {
    /// Selected blocks (0-based), ascending.
    pub blocks: Vec<usize>,
    pub jumps: Vec<f64>,
    /// BIC of the empty set, then of each nested 2-means set in order.
    pub bic_path: Vec<f64>,
}

/// Repeatedly moves the large 2-means cluster of the remaining jump sizes
/// `||theta_k||^2` into the candidate set, and keeps the set with the lowest
/// BIC along that nested path (the empty set included).
pub fn hard_threshold(theta: &ThetaEstimate, stats: &BlockStats, n_obs: usize) -> ThresholdTrace {
    let jumps: Vec<f64> = theta
        .theta
        .iter()
        .enumerate()
        .map(|(i, t)| if i == 0 { 0.0 } else { t.iter().map(|v| v * v).sum() })
        .collect();
    let mut sets: Vec<Vec<usize>> = vec![Vec::new()];
    let mut bic_path = vec![bic(stats, &[], n_obs)];
    loop {
        let taken = sets.last().unwrap();
        let pool: Vec<usize> = (1..jumps.len()).filter(|i| !taken.contains(i)).collect();
        if pool.len() < 2 {
            break;
        }
        let vals: Vec<f64> = pool.iter().map(|&i| jumps[i]).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            break;
        }
        let large = two_means(&vals);
        let mut next = taken.clone();
        next.extend(pool.iter().zip(&large).filter(|(_, l)| **l).map(|(i, _)| *i));
        next.sort_unstable();
        bic_path.push(bic(stats, &next, n_obs));
        sets.push(next);
    }
    // Ties go to the smaller set.
    let best = (0..bic_path.len()).fold(0, |b, i| if bic_path[i] < bic_path[b] { i } else { b });
    ThresholdTrace {
        blocks: sets.swap_remove(best),
        jumps,
        bic_path,
    }
}
