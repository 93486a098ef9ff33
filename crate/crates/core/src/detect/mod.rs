//! Change-point detection: block fused lasso, hard-thresholding, gap-statistic
//! clustering and exhaustive search.

pub mod cluster;
pub mod lasso;
pub mod refine;
pub mod threshold;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use cluster::{cluster_candidates, GapOptions, GapReport, GapRule};
pub use lasso::{
    block_fused_lasso, lambda_path_and_cv, BlockPartition, BlockStats, CvResult, LassoOptions,
    ThetaEstimate,
};
pub use refine::{exhaustive_refine, Refinement, SearchWindow};
pub use threshold::{hard_threshold, ThresholdTrace};

use crate::design::{standardize, Design, ScalingInfo};
use crate::diag::Warning;
use crate::error::{Error, Result};
use crate::linalg::ols;
use crate::model::SegmentParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    pub block_size: usize,
    pub grid_size: usize,
    /// Fixed penalty on the standardized system; skips cross-validation.
    pub lambda: Option<f64>,
    pub cv_fraction: f64,
    pub gap: GapOptions,
    pub lasso: LassoOptions,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            block_size: 7,
            grid_size: 20,
            lambda: None,
            cv_fraction: 0.2,
            gap: GapOptions::default(),
            lasso: LassoOptions::default(),
        }
    }
}

/// Everything the four detection stages produce before the final refit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakScan {
    pub partition: BlockPartition,
    pub scaling: ScalingInfo,
    pub cv: Option<CvResult>,
    pub theta: ThetaEstimate,
    pub threshold: ThresholdTrace,
    /// First days of the surviving blocks.
    pub candidates: Vec<usize>,
    pub clusters: Vec<Vec<usize>>,
    pub gap: Option<GapReport>,
    pub refinement: Refinement,
    pub warnings: Vec<Warning>,
}

impl BreakScan {
    pub fn points(&self) -> &[usize] {
        &self.refinement.points
    }
}

/// Runs the detection stages on a raw (unscaled) design.
pub fn scan(raw: &Design, config: &DetectConfig) -> Result<BreakScan> {
    let n = raw.len();
    if n < 2 * config.block_size {
        return Err(Error::InsufficientData(format!(
            "{n} days for blocks of {}",
            config.block_size
        )));
    }
    if !raw.is_finite() {
        return Err(Error::NonFiniteInput("design"));
    }
    let partition = BlockPartition::new(n, config.block_size)?;
    let (design, scaling) = standardize(raw);
    let mut warnings = Vec::new();
    if scaling.y_degenerate || !scaling.degenerate_columns.is_empty() {
        warnings.push(Warning::DegenerateScaling {
            columns: scaling.degenerate_columns.clone(),
            response: scaling.y_degenerate,
        });
    }
    let stats = BlockStats::new(&design, &partition);
    let (lambda, cv) = match config.lambda {
        Some(l) => (l, None),
        None => {
            if config.grid_size < 2 {
                return Err(Error::InvalidArgument("grid size must be at least 2".into()));
            }
            let cv = lasso::cv_on_stats(&stats, config.grid_size, config.cv_fraction, &config.lasso);
            (cv.selected, Some(cv))
        }
    };
    let theta = lasso::solve_prefix(&stats, stats.n_blocks(), lambda, None, &config.lasso);
    if !theta.converged {
        warnings.push(Warning::NoConvergence {
            lambda,
            sweeps: theta.iterations,
        });
    }
    let threshold = hard_threshold(&theta, &stats, design.n_obs());
    let candidates: Vec<usize> = threshold.blocks.iter().map(|&b| partition.start(b)).collect();
    let lens: Vec<usize> = threshold.blocks.iter().map(|&b| partition.len_of(b)).collect();
    let (clusters, gap) = cluster_candidates(&candidates, &lens, &config.gap);
    let refinement = exhaustive_refine(&design, &clusters, &theta, &partition);
    for (i, w) in refinement.windows.iter().enumerate() {
        if w.clipped {
            warnings.push(Warning::WindowOutOfRange { cluster: i });
        }
    }
    Ok(BreakScan {
        partition,
        scaling,
        cv,
        theta,
        threshold,
        candidates,
        clusters,
        gap,
        refinement,
        warnings,
    })
}

/// Segment `[start, end)` with its least-squares coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFit {
    pub start: usize,
    pub end: usize,
    pub coef: Vec<f64>,
}

/// Stacks days `[start, end)` of `design` into a dense regression.
pub fn stacked(design: &Design, start: usize, end: usize) -> (DMatrix<f64>, DVector<f64>) {
    let (m, d) = (design.resp_dim(), design.n_coef());
    let rows = (end - start) * m;
    let mut x = DMatrix::zeros(rows, d);
    let mut y = DVector::zeros(rows);
    for (k, t) in (start - 1..end - 1).enumerate() {
        let xt = design.x(t);
        let yt = design.y(t);
        for r in 0..m {
            y[k * m + r] = yt[r];
            for c in 0..d {
                x[(k * m + r, c)] = xt[r * d + c];
            }
        }
    }
    (x, y)
}

/// Segment boundaries implied by `points` over days `1..=n`.
pub fn segment_bounds(points: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut edges = vec![1];
    edges.extend_from_slice(points);
    edges.push(n + 1);
    edges.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Refits each segment by ordinary least squares on the raw design. A
/// singular segment falls back to the matching unscaled lasso level.
pub fn refit_segments(raw: &Design, scan: &BreakScan, warnings: &mut Vec<Warning>) -> Vec<SegmentFit> {
    segment_bounds(scan.points(), raw.len())
        .into_iter()
        .enumerate()
        .map(|(j, (start, end))| {
            let (x, y) = stacked(raw, start, end);
            let coef = match ols(&x, &y) {
                Ok(fit) => fit.coef,
                Err(_) => {
                    warnings.push(Warning::SingularSegment { start, end });
                    scan.scaling.unscale_coef(&scan.refinement.local[j])
                }
            };
            SegmentFit { start, end, coef }
        })
        .collect()
}

/// Detected break days and per-segment SIR rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointResult {
    pub block_size: usize,
    pub lambda: f64,
    pub converged: bool,
    /// Lasso increments on the standardized system.
    pub theta: Vec<Vec<f64>>,
    pub candidates: Vec<usize>,
    pub clusters: Vec<Vec<usize>>,
    pub windows: Vec<SearchWindow>,
    pub final_points: Vec<usize>,
    pub segments: Vec<SegmentParams>,
    pub warnings: Vec<Warning>,
}

/// Full detection on SIR regression rows (two responses, rates `beta`, `gamma`).
pub fn detect(raw: &Design, config: &DetectConfig) -> Result<(ChangePointResult, BreakScan)> {
    if raw.resp_dim() != 2 || raw.n_coef() != 2 {
        return Err(Error::InvalidArgument("SIR detection needs a 2x2 design".into()));
    }
    let scan = scan(raw, config)?;
    let mut warnings = scan.warnings.clone();
    let segments = refit_segments(raw, &scan, &mut warnings)
        .into_iter()
        .map(|s| SegmentParams {
            start: s.start,
            end: s.end,
            beta: s.coef[0],
            gamma: s.coef[1],
        })
        .collect();
    let result = ChangePointResult {
        block_size: config.block_size,
        lambda: scan.theta.lambda,
        converged: scan.theta.converged,
        theta: scan.theta.theta.clone(),
        candidates: scan.candidates.clone(),
        clusters: scan.clusters.clone(),
        windows: scan.refinement.windows.clone(),
        final_points: scan.refinement.points.clone(),
        segments,
        warnings,
    };
    Ok((result, scan))
}

/// Whether `point` falls in `[t_j - (t_j - t_{j-1})/5, t_j + (t_{j+1} - t_j)/5]`
/// for break `j` (0-based) of `breaks`, with `t_0 = 1` and `t_{m+1} = n`.
pub fn in_success_interval(point: usize, breaks: &[usize], j: usize, n: usize) -> bool {
    let prev = if j == 0 { 1 } else { breaks[j - 1] } as f64;
    let next = breaks.get(j + 1).copied().unwrap_or(n) as f64;
    let t = breaks[j] as f64;
    let p = point as f64;
    p >= t - (t - prev) / 5.0 && p <= t + (next - t) / 5.0
}
