//! Block fused lasso on the cumulative (lower-triangular) block design.
//!
//! With blocks `r_0 < r_1 < ... < r_k`, the level on block `j` is
//! `beta_j = theta_1 + ... + theta_j`, so the design column of `theta_i`
//! is the raw regressor masked to days `t >= r_{i-1}`. Everything the
//! solver needs reduces to per-block Gram matrices, which keeps a sweep
//! at `O(k^2 d^2)` regardless of the number of days.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};

/// Equal-width day blocks, the last one absorbing the remainder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub block_size: usize,
    /// `r_0 = 1 < r_1 < ... < r_k = n + 1`, 1-based day indices.
    pub boundaries: Vec<usize>,
}

impl BlockPartition {
    pub fn new(n: usize, block_size: usize) -> Result<Self> {
        if block_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "block size must be at least 2, got {block_size}"
            )));
        }
        if n < block_size {
            return Err(Error::InsufficientData(format!(
                "{n} days cannot hold one block of {block_size}"
            )));
        }
        let k = n / block_size;
        let mut boundaries: Vec<usize> = (0..k).map(|i| 1 + i * block_size).collect();
        boundaries.push(n + 1);
        Ok(Self {
            block_size,
            boundaries,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn n_days(&self) -> usize {
        self.boundaries[self.n_blocks()] - 1
    }

    /// First day of block `i` (0-based block index).
    pub fn start(&self, i: usize) -> usize {
        self.boundaries[i]
    }

    /// One past the last day of block `i`.
    pub fn end(&self, i: usize) -> usize {
        self.boundaries[i + 1]
    }

    pub fn len_of(&self, i: usize) -> usize {
        self.end(i) - self.start(i)
    }

    /// Block containing 1-based day `t`.
    pub fn block_of(&self, t: usize) -> usize {
        ((t - 1) / self.block_size).min(self.n_blocks() - 1)
    }
}

/// Per-block sufficient statistics `X'X`, `X'Y` and `Y'Y`.
#[derive(Debug, Clone)]
pub struct BlockStats {
    pub d: usize,
    pub days: Vec<usize>,
    pub xtx: Vec<Vec<f64>>,
    pub xty: Vec<Vec<f64>>,
    pub yty: Vec<f64>,
}

impl BlockStats {
    pub fn new(design: &Design, partition: &BlockPartition) -> Self {
        let d = design.n_coef();
        let m = design.resp_dim();
        let k = partition.n_blocks();
        let mut xtx = vec![vec![0.0; d * d]; k];
        let mut xty = vec![vec![0.0; d]; k];
        let mut yty = vec![0.0; k];
        let mut days = vec![0; k];
        for j in 0..k {
            days[j] = partition.len_of(j);
            for t in partition.start(j) - 1..partition.end(j) - 1 {
                let x = design.x(t);
                let y = design.y(t);
                for row in 0..m {
                    let xr = &x[row * d..(row + 1) * d];
                    let yv = y[row];
                    yty[j] += yv * yv;
                    for a in 0..d {
                        if xr[a] == 0.0 {
                            continue;
                        }
                        xty[j][a] += xr[a] * yv;
                        for b in 0..d {
                            xtx[j][a * d + b] += xr[a] * xr[b];
                        }
                    }
                }
            }
        }
        Self {
            d,
            days,
            xtx,
            xty,
            yty,
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.days.len()
    }

    /// Residual sum of squares on blocks `0..k` given per-block levels.
    pub fn rss(&self, levels: &[Vec<f64>]) -> f64 {
        levels
            .iter()
            .enumerate()
            .map(|(j, b)| self.block_rss(j, b))
            .sum()
    }

    /// `||Y_j - X_j b||^2` over block `j`.
    pub fn block_rss(&self, j: usize, b: &[f64]) -> f64 {
        let d = self.d;
        let h = &self.xtx[j];
        let mut quad = 0.0;
        let mut lin = 0.0;
        for a in 0..d {
            lin += self.xty[j][a] * b[a];
            for c in 0..d {
                quad += b[a] * h[a * d + c] * b[c];
            }
        }
        (self.yty[j] - 2.0 * lin + quad).max(0.0)
    }
}

/// Increments `theta` of the block fused lasso.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    /// `k` blocks of `d` coefficients; block 0 is the level.
    pub theta: Vec<Vec<f64>>,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ThetaEstimate {
    /// Cumulative sums `beta_j = theta_0 + ... + theta_j`.
    pub fn levels(&self) -> Vec<Vec<f64>> {
        cumulative(&self.theta)
    }

    pub fn l1_norm(&self) -> f64 {
        self.theta.iter().flatten().map(|v| v.abs()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        self.theta.iter().flatten().copied().collect()
    }
}

pub fn cumulative(theta: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut acc = vec![0.0; theta.first().map_or(0, Vec::len)];
    theta
        .iter()
        .map(|t| {
            acc.iter_mut().zip(t).for_each(|(a, v)| *a += v);
            acc.clone()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoOptions {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_sweeps: 10_000,
        }
    }
}

/// Coordinate-descent state over the first `k` blocks.
struct Solver<'a> {
    stats: &'a BlockStats,
    k: usize,
    d: usize,
    n: f64,
    theta: Vec<f64>,
    levels: Vec<f64>,
    /// `X_j'(Y_j - X_j beta_j)` per block.
    grad: Vec<f64>,
    /// Suffix sums of the Gram diagonal, divided by `n`.
    col_sq: Vec<f64>,
    /// Suffix sums of the block Gram matrices and `X'Y`.
    gram_tail: Vec<Vec<f64>>,
    xty_tail: Vec<Vec<f64>>,
}

impl<'a> Solver<'a> {
    fn new(stats: &'a BlockStats, k: usize, warm: Option<&[f64]>) -> Self {
        let d = stats.d;
        let n = stats.days[..k].iter().sum::<usize>() as f64;
        let theta = match warm {
            Some(w) if w.len() == k * d => w.to_vec(),
            _ => vec![0.0; k * d],
        };
        let mut col_sq = vec![0.0; k * d];
        for c in 0..d {
            let mut acc = 0.0;
            for i in (0..k).rev() {
                acc += stats.xtx[i][c * d + c];
                col_sq[i * d + c] = acc / n;
            }
        }
        let mut gram_tail = vec![vec![0.0; d * d]; k];
        let mut xty_tail = vec![vec![0.0; d]; k];
        for i in (0..k).rev() {
            for e in 0..d * d {
                gram_tail[i][e] = stats.xtx[i][e] + gram_tail.get(i + 1).map_or(0.0, |g| g[e]);
            }
            for e in 0..d {
                xty_tail[i][e] = stats.xty[i][e] + xty_tail.get(i + 1).map_or(0.0, |g| g[e]);
            }
        }
        let mut s = Self {
            stats,
            k,
            d,
            n,
            theta,
            levels: vec![0.0; k * d],
            grad: vec![0.0; k * d],
            col_sq,
            gram_tail,
            xty_tail,
        };
        s.refresh();
        s
    }

    fn refresh(&mut self) {
        let d = self.d;
        let mut acc = vec![0.0; d];
        for j in 0..self.k {
            for c in 0..d {
                acc[c] += self.theta[j * d + c];
                self.levels[j * d + c] = acc[c];
            }
            let h = &self.stats.xtx[j];
            for a in 0..d {
                let hb: f64 = (0..d).map(|c| h[a * d + c] * acc[c]).sum();
                self.grad[j * d + a] = self.stats.xty[j][a] - hb;
            }
        }
    }

    /// `(1/n) X_(i,c)' r`.
    fn score(&self, i: usize, c: usize) -> f64 {
        // Summed from the last block down, matching `lambda_max`.
        (i..self.k).rev().map(|j| self.grad[j * self.d + c]).sum::<f64>() / self.n
    }

    fn sweep(&mut self, lambda: f64) -> f64 {
        let d = self.d;
        let mut max_delta: f64 = 0.0;
        for i in 0..self.k {
            for c in 0..d {
                let idx = i * d + c;
                let a = self.col_sq[idx];
                let old = self.theta[idx];
                let new = if a > 0.0 {
                    soft_threshold(self.score(i, c) + a * old, lambda) / a
                } else {
                    0.0
                };
                let delta = new - old;
                if delta != 0.0 {
                    self.theta[idx] = new;
                    for j in i..self.k {
                        self.levels[j * d + c] += delta;
                        let h = &self.stats.xtx[j];
                        for e in 0..d {
                            self.grad[j * d + e] -= delta * h[e * d + c];
                        }
                    }
                    max_delta = max_delta.max(delta.abs());
                }
            }
        }
        max_delta
    }

    /// Gram block `(1/n) X_A' X_A` and `(1/n) X_A' Y` for the coordinates in `support`.
    fn support_system(&self, support: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let d = self.d;
        let p = support.len();
        let mut gram = DMatrix::zeros(p, p);
        let mut xty = DVector::zeros(p);
        for (a, &ja) in support.iter().enumerate() {
            let (ia, ca) = (ja / d, ja % d);
            xty[a] = self.xty_tail[ia][ca] / self.n;
            for (b, &jb) in support.iter().enumerate() {
                let (ib, cb) = (jb / d, jb % d);
                gram[(a, b)] = self.gram_tail[ia.max(ib)][ca * d + cb] / self.n;
            }
        }
        (gram, xty)
    }

    /// Objective up to a constant, for `theta` supported on the system's coordinates.
    fn objective(gram: &DMatrix<f64>, xty: &DVector<f64>, theta: &DVector<f64>, lambda: f64) -> f64 {
        0.5 * theta.dot(&(gram * theta)) - xty.dot(theta) + lambda * theta.lp_norm(1)
    }

    /// Solves the KKT system on the current support and accepts it when the
    /// signs and the inactive-coordinate bounds both hold.
    fn polish(&mut self, lambda: f64) -> bool {
        let support: Vec<usize> = (0..self.k * self.d).filter(|&j| self.theta[j] != 0.0).collect();
        if support.is_empty() {
            return false;
        }
        let (gram, xty) = self.support_system(&support);
        let signs = DVector::from_iterator(support.len(), support.iter().map(|&j| self.theta[j].signum()));
        let Some(chol) = gram.cholesky() else {
            return false;
        };
        let sol = chol.solve(&(xty - signs * lambda));
        if sol
            .iter()
            .zip(&support)
            .any(|(v, &j)| !v.is_finite() || v.signum() != self.theta[j].signum() || *v == 0.0)
        {
            return false;
        }
        let saved = self.theta.clone();
        for (v, &j) in sol.iter().zip(&support) {
            self.theta[j] = *v;
        }
        self.refresh();
        if self.inactive_violation(lambda, lambda * 1e-9 + 1e-12).is_some() {
            self.theta = saved;
            self.refresh();
            return false;
        }
        true
    }

    /// Zero coordinate whose score exceeds `lambda + slack` by the most.
    fn inactive_violation(&self, lambda: f64, slack: f64) -> Option<(usize, f64)> {
        let d = self.d;
        let mut worst = None;
        let mut bound = lambda + slack;
        for j in 0..self.k * d {
            if self.theta[j] != 0.0 || self.col_sq[j] <= 0.0 {
                continue;
            }
            let g = self.score(j / d, j % d);
            if g.abs() > bound {
                bound = g.abs();
                worst = Some((j, g));
            }
        }
        worst
    }

    /// Feature-sign search from the current iterate. Each step solves the
    /// sign-constrained system on the active set, then line-searches back to
    /// the best zero crossing; it terminates at an exact KKT point.
    fn feature_sign(&mut self, lambda: f64, max_steps: usize) -> (bool, usize) {
        let slack = lambda * 1e-7 + 1e-10;
        let mut signs: Vec<f64> = self.theta.iter().map(|v| if *v == 0.0 { 0.0 } else { v.signum() }).collect();
        let mut need_add = signs.iter().all(|v| *v == 0.0);
        for step in 0..max_steps {
            if need_add {
                match self.inactive_violation(lambda, slack) {
                    Some((j, g)) => signs[j] = g.signum(),
                    None => return (true, step),
                }
            }
            let support: Vec<usize> = (0..signs.len()).filter(|&j| signs[j] != 0.0).collect();
            let (gram, xty) = self.support_system(&support);
            let s = DVector::from_iterator(support.len(), support.iter().map(|&j| signs[j]));
            let Some(chol) = gram.clone().cholesky() else {
                return (false, step);
            };
            let target = chol.solve(&(&xty - s * lambda));
            if target.iter().any(|v| !v.is_finite()) {
                return (false, step);
            }
            let current = DVector::from_iterator(support.len(), support.iter().map(|&j| self.theta[j]));
            let mut best = target.clone();
            let mut best_f = Self::objective(&gram, &xty, &target, lambda);
            let mut settled = target.iter().zip(current.iter()).all(|(t, c)| *c == 0.0 || t.signum() == c.signum());
            for a in 0..support.len() {
                let (c, t) = (current[a], target[a]);
                if c == 0.0 || t.signum() == c.signum() {
                    continue;
                }
                let frac = c / (c - t);
                let mut point = &current + (&target - &current) * frac;
                point[a] = 0.0;
                let f = Self::objective(&gram, &xty, &point, lambda);
                if f < best_f {
                    best_f = f;
                    best = point;
                    settled = false;
                }
            }
            for (v, &j) in best.iter().zip(&support) {
                self.theta[j] = if v.abs() <= f64::EPSILON * 1e-3 { 0.0 } else { *v };
                signs[j] = if self.theta[j] == 0.0 { 0.0 } else { self.theta[j].signum() };
            }
            self.refresh();
            // The unconstrained target satisfies the active conditions; a
            // zero crossing needs another solve on the reduced set.
            need_add = settled;
        }
        (false, max_steps)
    }

}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

fn to_blocks(flat: &[f64], d: usize) -> Vec<Vec<f64>> {
    flat.chunks(d).map(<[f64]>::to_vec).collect()
}

const CD_WARMUP: usize = 25;

/// Minimizes `(1/2n)||Y - X Theta||^2 + lambda ||Theta||_1` over the first
/// `k` blocks of `stats`, where `n` counts their days.
pub fn solve_prefix(
    stats: &BlockStats,
    k: usize,
    lambda: f64,
    warm: Option<&[f64]>,
    opts: &LassoOptions,
) -> ThetaEstimate {
    let mut solver = Solver::new(stats, k, warm);
    let mut iterations = 0;
    let mut converged = false;
    // Coordinate descent finds the rough support quickly but crawls on the
    // strongly correlated cumulative columns, so an active-set search finishes.
    let warmup = opts.max_sweeps.min(CD_WARMUP);
    while iterations < warmup {
        iterations += 1;
        if solver.sweep(lambda) < opts.tol {
            converged = true;
            break;
        }
    }
    if converged {
        solver.polish(lambda);
    } else {
        let budget = 4 * k * solver.d + 50;
        let (ok, steps) = solver.feature_sign(lambda, budget);
        iterations += steps;
        converged = ok;
        while !converged && iterations < opts.max_sweeps {
            iterations += 1;
            if solver.sweep(lambda) < opts.tol {
                converged = true;
            }
        }
    }
    ThetaEstimate {
        theta: to_blocks(&solver.theta, solver.d),
        lambda,
        iterations,
        converged,
    }
}

pub fn block_fused_lasso(
    design: &Design,
    partition: &BlockPartition,
    lambda: f64,
    opts: &LassoOptions,
) -> Result<ThetaEstimate> {
    check_shape(design, partition)?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let stats = BlockStats::new(design, partition);
    Ok(solve_prefix(&stats, stats.n_blocks(), lambda, None, opts))
}

fn check_shape(design: &Design, partition: &BlockPartition) -> Result<()> {
    if partition.n_days() != design.len() {
        return Err(Error::LengthMismatch {
            left: partition.n_days(),
            right: design.len(),
        });
    }
    if !design.is_finite() {
        return Err(Error::NonFiniteInput("design"));
    }
    Ok(())
}

/// Smallest penalty at which every increment is zero.
pub fn lambda_max(stats: &BlockStats, k: usize) -> f64 {
    let d = stats.d;
    let n = stats.days[..k].iter().sum::<usize>() as f64;
    let mut best: f64 = 0.0;
    let mut acc = vec![0.0; d];
    for i in (0..k).rev() {
        for c in 0..d {
            acc[c] += stats.xty[i][c];
            best = best.max(acc[c].abs());
        }
    }
    best / n
}

/// Log-spaced penalties from `lambda_max` down to `1e-4 * lambda_max`.
pub fn lambda_grid(lambda_max: f64, grid_size: usize) -> Vec<f64> {
    if grid_size == 1 || lambda_max <= 0.0 {
        return vec![lambda_max.max(0.0)];
    }
    let lo = (1e-4f64).ln();
    (0..grid_size)
        .map(|g| lambda_max * (lo * g as f64 / (grid_size - 1) as f64).exp())
        .collect()
}

/// Cross-validation outcome for a penalty grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub grid: Vec<f64>,
    pub errors: Vec<f64>,
    pub selected: f64,
}

/// Picks the penalty by rolling-origin validation: each of the last
/// `cv_fraction` of blocks is predicted by the final level of a fit on the
/// blocks before it. Ties go to the larger penalty.
pub fn lambda_path_and_cv(
    design: &Design,
    partition: &BlockPartition,
    grid_size: usize,
    cv_fraction: f64,
    opts: &LassoOptions,
) -> Result<CvResult> {
    check_shape(design, partition)?;
    if grid_size < 2 {
        return Err(Error::InvalidArgument("grid size must be at least 2".into()));
    }
    let stats = BlockStats::new(design, partition);
    Ok(cv_on_stats(&stats, grid_size, cv_fraction, opts))
}

pub(crate) fn cv_on_stats(
    stats: &BlockStats,
    grid_size: usize,
    cv_fraction: f64,
    opts: &LassoOptions,
) -> CvResult {
    let k = stats.n_blocks();
    let grid = lambda_grid(lambda_max(stats, k), grid_size);
    let n_val = ((cv_fraction * k as f64).round() as usize).clamp(1, k.saturating_sub(1).max(1));
    let first = (k - n_val).max(1);
    let mut errors = vec![0.0; grid.len()];
    for v in first..k {
        let mut warm: Option<Vec<f64>> = None;
        for (g, &lam) in grid.iter().enumerate() {
            let est = solve_prefix(stats, v, lam, warm.as_deref(), opts);
            let level = est.levels().pop().unwrap_or_default();
            errors[g] += stats.block_rss(v, &level);
            warm = Some(est.flat());
        }
    }
    let mut best = 0;
    for g in 1..grid.len() {
        if errors[g] < errors[best] {
            best = g;
        }
    }
    CvResult {
        selected: grid[best],
        grid,
        errors,
    }
}
