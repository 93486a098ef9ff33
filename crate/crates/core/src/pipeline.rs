//! Three-step estimation (change points, spatial least squares, residual VAR),
//! under-reporting search, forecasting and inference.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{sample_std, Design, ScalingInfo};
use crate::detect::{detect, segment_bounds, stacked, ChangePointResult, DetectConfig};
use crate::diag::Warning;
use crate::error::{Error, Result};
use crate::linalg::{normal_two_sided_p, ols};
use crate::model::{build_design, segment_at, to_true_infected, EpidemicSeries, SegmentParams, SirDesignRow, UnderReporting};
use crate::spatial::{build_weights, spatial_covariate, RegionCatalog, SpatialWeights, WeightOptions, WeightScheme};
use crate::varfit::{fit_var, screen_var_breaks, VarModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelVariant {
    /// Piecewise SIR only.
    Model1,
    /// Piecewise SIR plus the spatial term.
    Model2,
    /// Model 2 with VAR residuals.
    Model3,
}

impl ModelVariant {
    pub fn spatial(self) -> bool {
        self != Self::Model1
    }
}

impl std::str::FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1" | "model1" => Ok(Self::Model1),
            "2" | "model2" => Ok(Self::Model2),
            "3" | "model3" => Ok(Self::Model3),
            _ => Err(Error::InvalidArgument(format!("unknown model {s}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub variant: ModelVariant,
    pub detect: DetectConfig,
    pub scheme: WeightScheme,
    pub weights: WeightOptions,
    /// Score similarity over the neighbours' whole series rather than the
    /// training window.
    pub similarity_full_series: bool,
    pub underreporting: UnderReporting,
    /// Values of `a` searched when a reporting family is set; empty keeps the
    /// configured `a`.
    pub a_grid: Vec<f64>,
    pub var_p_max: usize,
    pub screen_var: bool,
    /// Block size of the VAR break screen; the detection block size if unset.
    pub var_block_size: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            variant: ModelVariant::Model3,
            detect: DetectConfig::default(),
            scheme: WeightScheme::DistancePower,
            weights: WeightOptions::default(),
            similarity_full_series: false,
            underreporting: UnderReporting::none(),
            a_grid: Vec::new(),
            var_p_max: 7,
            screen_var: true,
            var_block_size: None,
        }
    }
}

/// 21 evenly spaced values over `[0.1, 0.3]`.
pub fn default_a_grid() -> Vec<f64> {
    (0..21).map(|i| 0.1 + 0.01 * i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaInference {
    pub estimate: f64,
    pub se: f64,
    pub p_value: f64,
    pub ci: [f64; 2],
}

impl AlphaInference {
    fn new(estimate: f64, se: f64) -> Self {
        Self {
            estimate,
            se,
            p_value: normal_two_sided_p(estimate / se),
            ci: [estimate - 1.96 * se, estimate + 1.96 * se],
        }
    }
}

/// In-sample MRPE of the corrected new infections for each `a` tried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnderReportingFit {
    pub grid: Vec<f64>,
    pub mrpe: Vec<f64>,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub region_id: String,
    pub variant: ModelVariant,
    pub train_start: NaiveDate,
    /// Training days; regression rows cover days `1..train_len-1`.
    pub train_len: usize,
    pub population: f64,
    pub underreporting: UnderReporting,
    pub underreporting_search: Option<UnderReportingFit>,
    pub change_points: ChangePointResult,
    pub change_dates: Vec<NaiveDate>,
    /// Rates used by the fitted model (Step 2 estimates when spatial).
    pub segments: Vec<SegmentParams>,
    pub weights: Option<SpatialWeights>,
    pub alpha: Option<AlphaInference>,
    pub var: Option<VarModel>,
    pub scaling: ScalingInfo,
    /// In-sample predictions of `Y_t`, VAR correction included.
    pub fitted: Vec<[f64; 2]>,
    /// Residuals of the segment and spatial terms, before any VAR correction.
    pub residuals: Vec<[f64; 2]>,
    /// First row (1-based) at which the VAR correction applies.
    pub innovation_start: usize,
    pub rss: f64,
    pub warnings: Vec<Warning>,
}

impl FittedModel {
    /// `Y_t` minus the full fitted value, from `innovation_start` on.
    pub fn innovations(&self) -> Vec<[f64; 2]> {
        let k = self.innovation_start - 1;
        self.residuals[k..]
            .iter()
            .zip(&self.var_correction()[k..])
            .map(|(e, c)| [e[0] - c[0], e[1] - c[1]])
            .collect()
    }

    fn var_correction(&self) -> Vec<[f64; 2]> {
        let mut out = vec![[0.0; 2]; self.residuals.len()];
        if let Some(var) = &self.var {
            for (r, c) in out.iter_mut().enumerate().skip(self.innovation_start - 1) {
                *c = var.predict(&self.residuals[..r]);
            }
        }
        out
    }

    pub fn alpha_value(&self) -> f64 {
        self.alpha.map_or(0.0, |a| a.estimate)
    }
}

struct Step2 {
    segments: Vec<SegmentParams>,
    alpha: Option<AlphaInference>,
    fitted: Vec<[f64; 2]>,
}

/// Least squares on segment-indicator SIR columns, plus `N Z_t` when given.
fn augmented_fit(raw: &Design, bounds: &[(usize, usize)], z: Option<&[[f64; 2]]>, pop: f64) -> Result<Step2> {
    let n = raw.len();
    let m = bounds.len();
    let cols = 2 * m + usize::from(z.is_some());
    let mut x = DMatrix::zeros(2 * n, cols);
    let mut y = DVector::zeros(2 * n);
    for (j, &(s, e)) in bounds.iter().enumerate() {
        for t in s..e {
            let (xt, yt, r) = (raw.x(t - 1), raw.y(t - 1), 2 * (t - 1));
            y[r] = yt[0];
            y[r + 1] = yt[1];
            x[(r, 2 * j)] = xt[0];
            x[(r, 2 * j + 1)] = xt[1];
            x[(r + 1, 2 * j)] = xt[2];
            x[(r + 1, 2 * j + 1)] = xt[3];
            if let Some(z) = z {
                x[(r, 2 * m)] = pop * z[t - 1][0];
                x[(r + 1, 2 * m)] = pop * z[t - 1][1];
            }
        }
    }
    let fit = ols(&x, &y)?;
    let segments = bounds
        .iter()
        .enumerate()
        .map(|(j, &(start, end))| SegmentParams {
            start,
            end,
            beta: fit.coef[2 * j],
            gamma: fit.coef[2 * j + 1],
        })
        .collect();
    let alpha = z.map(|_| AlphaInference::new(fit.coef[2 * m], fit.standard_errors()[2 * m]));
    let pred = &x * DVector::from_column_slice(&fit.coef);
    let fitted = (0..n).map(|t| [pred[2 * t], pred[2 * t + 1]]).collect();
    Ok(Step2 {
        segments,
        alpha,
        fitted,
    })
}

fn segment_fitted(raw: &Design, segments: &[SegmentParams]) -> Vec<[f64; 2]> {
    (0..raw.len())
        .map(|t| {
            let s = segment_at(segments, t + 1);
            let p = raw.predict(t, &[s.beta, s.gamma]);
            [p[0], p[1]]
        })
        .collect()
}

fn residuals_of(raw: &Design, fitted: &[[f64; 2]]) -> Vec<[f64; 2]> {
    fitted
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let y = raw.y(t);
            [y[0] - f[0], y[1] - f[1]]
        })
        .collect()
}

/// Mean of `|pred - obs| / |obs|` over `(pred, obs)` pairs with `obs != 0`;
/// `None` when no pair qualifies.
pub fn mrpe(pairs: impl IntoIterator<Item = (f64, f64)>) -> Option<f64> {
    let errs: Vec<f64> = pairs
        .into_iter()
        .filter(|(_, obs)| *obs != 0.0)
        .map(|(p, obs)| ((p - obs) / obs).abs())
        .collect();
    (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
}

/// In-sample MRPE of `dI_f` for the Model-1 fit under `u`.
fn model1_mrpe(series: &EpidemicSeries, u: &UnderReporting, config: &DetectConfig) -> Result<f64> {
    let raw = build_design(series, u)?.to_design();
    let (cp, _) = detect(&raw, config)?;
    let fitted = segment_fitted(&raw, &cp.segments);
    Ok(mrpe(fitted.iter().enumerate().map(|(t, f)| (f[0], raw.y(t)[0]))).unwrap_or(0.0))
}

/// Grid search for the under-reporting parameter `a`; ties go to the
/// smallest `a`.
pub fn fit_underreporting(series: &EpidemicSeries, config: &PipelineConfig, grid: &[f64]) -> Result<UnderReportingFit> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty a grid".into()));
    }
    let mut mrpe = Vec::with_capacity(grid.len());
    let mut first_err = None;
    for &a in grid {
        let u = config.underreporting.with_a(a);
        match u.validate().and_then(|_| model1_mrpe(series, &u, &config.detect)) {
            Ok(v) => mrpe.push(v),
            Err(e) => {
                first_err.get_or_insert(e);
                mrpe.push(f64::INFINITY);
            }
        }
    }
    let mut best: Option<usize> = None;
    for i in 0..grid.len() {
        if !mrpe[i].is_finite() {
            continue;
        }
        best = match best {
            Some(b) if mrpe[b] < mrpe[i] || (mrpe[b] == mrpe[i] && grid[b] <= grid[i]) => Some(b),
            _ => Some(i),
        };
    }
    match best {
        Some(b) => Ok(UnderReportingFit {
            grid: grid.to_vec(),
            best: grid[b],
            mrpe,
        }),
        None => Err(first_err.expect("every grid value failed")),
    }
}

/// Fits Model 1, 2 or 3 on the training window `series`.
pub fn fit(series: &EpidemicSeries, catalog: Option<&RegionCatalog>, config: &PipelineConfig) -> Result<FittedModel> {
    series.validate()?;
    let b = config.detect.block_size;
    if series.len() < 4 * b {
        return Err(Error::InsufficientData(format!(
            "{} days for blocks of {b}",
            series.len()
        )));
    }
    let mut warnings = Vec::new();
    let (u, search) = if config.a_grid.is_empty() || config.underreporting.is_none() {
        (config.underreporting, None)
    } else {
        let s = fit_underreporting(series, config, &config.a_grid)?;
        (config.underreporting.with_a(s.best), Some(s))
    };
    u.validate()?;
    let sir = build_design(series, &u)?;
    if !sir.clamped_days.is_empty() {
        warnings.push(Warning::ClampedSusceptibles {
            region: series.region_id.clone(),
            days: sir.clamped_days.len(),
        });
    }
    let raw = sir.to_design();
    let (cp, scan) = detect(&raw, &config.detect)?;
    let n = raw.len();

    let (weights, segments, alpha, mut fitted) = if config.variant.spatial() {
        let catalog = catalog.ok_or_else(|| Error::InvalidArgument("spatial models need a region catalog".into()))?;
        let mut opts = config.weights.clone();
        if !config.similarity_full_series {
            opts.similarity_days = Some(series.len());
        }
        let w = build_weights(catalog, &series.region_id, config.scheme, &u, &opts)?;
        let cov = spatial_covariate(&w, catalog, series.dates[0], n, &u)?;
        warnings.extend(w.warnings.iter().cloned());
        warnings.extend(cov.warnings);
        let bounds = segment_bounds(&cp.final_points, n);
        let step2 = augmented_fit(&raw, &bounds, Some(&cov.z), series.population)?;
        (Some(w), step2.segments, step2.alpha, step2.fitted)
    } else {
        let fitted = segment_fitted(&raw, &cp.segments);
        (None, cp.segments.clone(), None, fitted)
    };
    let residuals = residuals_of(&raw, &fitted);

    let mut innovation_start = 1;
    let var = if config.variant == ModelVariant::Model3 {
        let base = fit_var(&residuals, config.var_p_max)?;
        let model = if config.screen_var && base.p >= 1 {
            let cfg = DetectConfig {
                block_size: config.var_block_size.unwrap_or(b),
                lambda: None,
                ..config.detect.clone()
            };
            screen_var_breaks(&residuals, &base, &cfg)?
        } else {
            base
        };
        innovation_start = model.segment_start + model.p;
        for r in innovation_start - 1..n {
            let c = model.predict(&residuals[..r]);
            fitted[r][0] += c[0];
            fitted[r][1] += c[1];
        }
        warnings.extend(model.warnings.iter().cloned());
        Some(model)
    } else {
        None
    };
    let rss = residuals_of(&raw, &fitted)
        .iter()
        .map(|e| e[0] * e[0] + e[1] * e[1])
        .sum();
    warnings.extend(cp.warnings.iter().cloned());
    let change_dates = cp.final_points.iter().map(|&t| series.date(t)).collect();
    Ok(FittedModel {
        region_id: series.region_id.clone(),
        variant: config.variant,
        train_start: series.dates[0],
        train_len: series.len(),
        population: series.population,
        underreporting: u,
        underreporting_search: search,
        change_points: cp,
        change_dates,
        segments,
        weights,
        alpha,
        var,
        scaling: scan.scaling,
        fitted,
        residuals,
        innovation_start,
        rss,
        warnings,
    })
}

/// Estimate, standard error, normal p-value and 95% interval for `alpha`.
pub fn alpha_inference(model: &FittedModel) -> Option<AlphaInference> {
    model.alpha
}

/// In-sample `I~(t) = I(1) + sum_{k<t} dI^(k)` and the matching `R~(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedSeries {
    pub infected: Vec<f64>,
    pub recovered: Vec<f64>,
}

pub fn fitted_series(model: &FittedModel, series: &EpidemicSeries) -> Result<FittedSeries> {
    if series.len() < model.train_len {
        return Err(Error::LengthMismatch {
            left: model.train_len,
            right: series.len(),
        });
    }
    let mut infected = vec![series.infected[0]];
    let mut recovered = vec![series.recovered[0]];
    for (k, f) in model.fitted.iter().enumerate() {
        let keep = model.underreporting.reported_fraction(k + 2)?;
        infected.push(infected[k] + f[0] * keep);
        recovered.push(recovered[k] + f[1]);
    }
    Ok(FittedSeries { infected, recovered })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForecastMode {
    /// Each day predicted from observations through the previous day.
    #[default]
    Rolling,
    /// Recurses on its own predictions from the end of training.
    Free,
}

impl std::str::FromStr for ForecastMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rolling" => Ok(Self::Rolling),
            "free" => Ok(Self::Free),
            _ => Err(Error::InvalidArgument(format!("unknown forecast mode {s}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastOptions {
    pub mode: ForecastMode,
    /// Segment whose rates drive the forecast; the last one if unset.
    pub segment: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDay {
    /// 1-based day counted from the training start.
    pub day: usize,
    pub date: NaiveDate,
    pub predicted_infected: f64,
    pub predicted_recovered: f64,
    pub observed_infected: Option<f64>,
    pub observed_recovered: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub mode: ForecastMode,
    pub horizon: usize,
    pub days: Vec<ForecastDay>,
    /// Absolute relative errors on scored days.
    pub errors_infected: Vec<f64>,
    pub errors_recovered: Vec<f64>,
    pub mrpe_infected: Option<f64>,
    pub mrpe_recovered: Option<f64>,
    /// Mean of the two MRPEs.
    pub mrpe_ir: Option<f64>,
    pub std_infected: f64,
    pub std_recovered: f64,
    pub warnings: Vec<Warning>,
}

impl ForecastReport {
    fn score(mode: ForecastMode, days: Vec<ForecastDay>, warnings: Vec<Warning>) -> Self {
        let rel = |pairs: Vec<(f64, Option<f64>)>| -> Vec<f64> {
            pairs
                .into_iter()
                .filter_map(|(p, o)| o.filter(|v| *v != 0.0).map(|v| ((p - v) / v).abs()))
                .collect()
        };
        let ei = rel(days.iter().map(|d| (d.predicted_infected, d.observed_infected)).collect());
        let er = rel(days.iter().map(|d| (d.predicted_recovered, d.observed_recovered)).collect());
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let (mi, mr) = (mean(&ei), mean(&er));
        let mrpe_ir = match (mi, mr) {
            (Some(a), Some(b)) => Some((a + b) / 2.0),
            (a, b) => a.or(b),
        };
        Self {
            mode,
            horizon: days.len(),
            std_infected: sample_std(&ei),
            std_recovered: sample_std(&er),
            days,
            errors_infected: ei,
            errors_recovered: er,
            mrpe_infected: mi,
            mrpe_recovered: mr,
            mrpe_ir,
            warnings,
        }
    }
}

/// Forecasts days `train_len+1..=train_len+n_test` with
/// `I^(t) = I(t-1) + dI^(t-1)`, where `I(t-1)` is observed in rolling mode
/// and predicted in free mode.
pub fn forecast(
    model: &FittedModel,
    series: &EpidemicSeries,
    catalog: Option<&RegionCatalog>,
    n_test: usize,
    opts: &ForecastOptions,
) -> Result<ForecastReport> {
    let off = series
        .dates
        .iter()
        .position(|d| *d == model.train_start)
        .ok_or_else(|| Error::AlignmentError(series.region_id.clone()))?;
    let full = series.window(off + 1, series.len() - off)?;
    let t0 = model.train_len;
    if full.len() < t0 {
        return Err(Error::InsufficientData(format!(
            "{} observed days for a {t0}-day training window",
            full.len()
        )));
    }
    let available = full.len() - t0;
    if opts.mode == ForecastMode::Rolling && n_test > available {
        return Err(Error::HorizonTooLong {
            requested: n_test,
            available,
        });
    }
    if n_test == 0 {
        return Ok(ForecastReport::score(opts.mode, Vec::new(), Vec::new()));
    }
    let seg = match opts.segment {
        Some(j) => model
            .segments
            .get(j)
            .ok_or_else(|| Error::InvalidArgument(format!("no segment {j}")))?,
        None => model.segments.last().expect("fitted models have a segment"),
    };
    let u = &model.underreporting;
    let pop = model.population;
    let last_row = t0 + n_test - 1;
    let mut warnings = Vec::new();
    let z = match &model.weights {
        Some(w) => {
            let catalog = catalog.ok_or_else(|| Error::InvalidArgument("spatial models need a region catalog".into()))?;
            let cov = spatial_covariate(w, catalog, full.dates[0], last_row, u)?;
            warnings.extend(cov.warnings);
            cov.z
        }
        None => vec![[0.0; 2]; last_row],
    };
    let alpha = model.alpha_value();
    // Segment and spatial part of Y for `row` given the state on that day.
    let base = |row: usize, i_f: f64, r: f64| -> [f64; 2] {
        let s = (pop - i_f - r).max(0.0);
        let p = SirDesignRow::new(0.0, 0.0, s, i_f, pop).predict(seg.beta, seg.gamma);
        [p[0] + alpha * pop * z[row - 1][0], p[1] + alpha * pop * z[row - 1][1]]
    };
    let var_step = |hist: &[[f64; 2]]| model.var.as_ref().map_or([0.0; 2], |v| v.predict(hist));
    let mut hist = model.residuals.clone();
    let obs_len = full.len().min(t0 + n_test);
    let i_f_obs = to_true_infected(&full.head(obs_len)?, u)?;
    let observed = |t: usize| (t <= full.len()).then(|| (full.infected[t - 1], full.recovered[t - 1]));
    let mut days = Vec::with_capacity(n_test);
    let (mut i_hat, mut i_f_hat, mut r_hat) = (full.infected[t0 - 1], i_f_obs[t0 - 1], full.recovered[t0 - 1]);
    for t in t0 + 1..=t0 + n_test {
        let row = t - 1;
        let keep = u.reported_fraction(t)?;
        let obs = observed(t);
        let (pi, pr) = match opts.mode {
            ForecastMode::Rolling => {
                let (i_prev, r_prev) = (full.infected[row - 1], full.recovered[row - 1]);
                let g = base(row, i_f_obs[row - 1], r_prev);
                let c = var_step(&hist);
                let pred = (i_prev + (g[0] + c[0]) * keep, r_prev + g[1] + c[1]);
                let y = [i_f_obs[t - 1] - i_f_obs[row - 1], full.recovered[t - 1] - r_prev];
                hist.push([y[0] - g[0], y[1] - g[1]]);
                pred
            }
            ForecastMode::Free => {
                let g = base(row, i_f_hat, r_hat);
                let c = var_step(&hist);
                hist.push(c);
                i_hat += (g[0] + c[0]) * keep;
                i_f_hat += g[0] + c[0];
                r_hat += g[1] + c[1];
                (i_hat, r_hat)
            }
        };
        days.push(ForecastDay {
            day: t,
            date: full.dates[0] + chrono::Duration::days(t as i64 - 1),
            predicted_infected: pi,
            predicted_recovered: pr,
            observed_infected: obs.map(|o| o.0),
            observed_recovered: obs.map(|o| o.1),
        });
    }
    if days.iter().any(|d| !d.predicted_infected.is_finite() || !d.predicted_recovered.is_finite()) {
        return Err(Error::NonFiniteInput("forecast"));
    }
    Ok(ForecastReport::score(opts.mode, days, warnings))
}

/// Per-segment least-squares rates with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentInference {
    pub start: usize,
    pub end: usize,
    pub beta: f64,
    pub gamma: f64,
    pub se_beta: f64,
    pub se_gamma: f64,
}

/// OLS on rows `[start, end)` of `design` with `sigma^2 = RSS / (2 n_seg - 2)`.
pub fn segment_ols(design: &Design, start: usize, end: usize) -> Result<SegmentInference> {
    if end < start + 3 || end > design.len() + 1 || start == 0 {
        return Err(Error::SegmentTooShort { start, end });
    }
    let (x, y) = stacked(design, start, end);
    let fit = ols(&x, &y)?;
    let se = fit.standard_errors();
    Ok(SegmentInference {
        start,
        end,
        beta: fit.coef[0],
        gamma: fit.coef[1],
        se_beta: se[0],
        se_gamma: se[1],
    })
}

/// Rebuilds the training rows of `series` and runs [`segment_ols`] on every
/// fitted segment.
pub fn segment_rate_inference(model: &FittedModel, series: &EpidemicSeries) -> Result<Vec<SegmentInference>> {
    let raw = build_design(&series.head(model.train_len)?, &model.underreporting)?.to_design();
    model
        .segments
        .iter()
        .map(|s| segment_ols(&raw, s.start, s.end))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;

    fn day0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 3, 1).unwrap()
    }

    /// Deterministic SIR path with one break in beta.
    fn sir_path(id: &str, days: usize, brk: usize, pop: f64) -> EpidemicSeries {
        let (mut i, mut r) = (1000.0, 0.0);
        let mut is = vec![i];
        let mut rs = vec![r];
        for t in 1..days {
            let beta = if t < brk { 0.1 } else { 0.05 };
            let s = pop - i - r;
            let di = beta * s * i / pop - 0.04 * i;
            let dr = 0.04 * i;
            i += di;
            r += dr;
            is.push(i);
            rs.push(r);
        }
        EpidemicSeries::from_counts(id, day0(), is, rs, pop).unwrap()
    }

    fn model1_cfg() -> PipelineConfig {
        PipelineConfig {
            variant: ModelVariant::Model1,
            detect: DetectConfig {
                block_size: 8,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_model1_fit_and_forecast_are_exact() {
        let full = sir_path("x", 220, 100, 1e6);
        let train = full.head(200).unwrap();
        let m = fit(&train, None, &model1_cfg()).unwrap();
        assert_eq!(m.change_points.final_points, vec![100]);
        assert_eq!(m.change_dates, vec![day0() + Duration::days(99)]);
        assert!(m.rss < 1e-12 * 1e6, "{}", m.rss);
        for mode in [ForecastMode::Rolling, ForecastMode::Free] {
            let rep = forecast(&m, &full, None, 20, &ForecastOptions { mode, segment: None }).unwrap();
            assert_eq!(rep.days.len(), 20);
            assert!(rep.mrpe_infected.unwrap() < 1e-9, "{mode:?} {:?}", rep.mrpe_infected);
            assert!(rep.mrpe_recovered.unwrap() < 1e-9);
        }
        let fs = fitted_series(&m, &train).unwrap();
        assert_eq!(fs.infected[0], train.infected[0]);
        for t in 0..train.len() {
            assert!((fs.infected[t] - train.infected[t]).abs() < 1e-6 * train.infected[t]);
            assert!((fs.recovered[t] - train.recovered[t]).abs() < 1e-6 * train.recovered[t].max(1.0));
        }
    }

    #[test]
    fn rolling_needs_observed_days() {
        let full = sir_path("x", 210, 100, 1e6);
        let m = fit(&full.head(200).unwrap(), None, &model1_cfg()).unwrap();
        let err = forecast(&m, &full, None, 20, &ForecastOptions::default()).unwrap_err();
        assert!(matches!(err, Error::HorizonTooLong { requested: 20, available: 10 }));
        let free = ForecastOptions {
            mode: ForecastMode::Free,
            segment: None,
        };
        let rep = forecast(&m, &full, None, 20, &free).unwrap();
        assert_eq!(rep.days.len(), 20);
        assert_eq!(rep.errors_infected.len(), 10);
        let empty = forecast(&m, &full, None, 0, &ForecastOptions::default()).unwrap();
        assert!(empty.days.is_empty() && empty.mrpe_infected.is_none());
    }

    #[test]
    fn hand_segment_ols() {
        // Four rows, two unknowns: solve the 8-row stacked system by hand.
        let mut d = Design::new(2, 2);
        let rows = [
            ([3.0, 1.0], [2.0, -1.0, 0.0, 1.0]),
            ([5.0, 2.5], [4.0, -2.0, 0.0, 2.0]),
            ([2.0, 0.4], [1.0, -0.5, 0.0, 0.5]),
            ([6.5, 3.2], [6.0, -3.0, 0.0, 3.0]),
        ];
        for (y, x) in rows {
            d.push(&y, &x);
        }
        let s = segment_ols(&d, 1, 5).unwrap();
        // X'X = [[57, -28.5], [-28.5, 28.5]], X'Y = [67, -17.7]
        let (a, b, c) = (57.0, -28.5, 28.5);
        let det = a * c - b * b;
        let beta = (c * 67.0 - b * -17.7) / det;
        let gamma = (-b * 67.0 + a * -17.7) / det;
        assert!((s.beta - beta).abs() < 1e-12);
        assert!((s.gamma - gamma).abs() < 1e-12);
        let mut rss = 0.0;
        for (y, x) in rows {
            let r0 = y[0] - x[0] * beta - x[1] * gamma;
            let r1 = y[1] - x[3] * gamma;
            rss += r0 * r0 + r1 * r1;
        }
        let s2 = rss / 6.0;
        assert!((s.se_beta - (c / det * s2).sqrt()).abs() < 1e-12);
        assert!((s.se_gamma - (a / det * s2).sqrt()).abs() < 1e-12);
        assert!(matches!(segment_ols(&d, 2, 4), Err(Error::SegmentTooShort { .. })));
    }

    #[test]
    fn duplicated_rows_shrink_standard_errors() {
        let mut d = Design::new(2, 2);
        let mut dd = Design::new(2, 2);
        for k in 0..12 {
            let i = 10.0 + k as f64;
            let x = [0.9 * i, -i, 0.0, i];
            let noise = ((k * 7919) % 13) as f64 / 13.0 - 0.5;
            let y = [0.3 * x[0] + 0.1 * x[1] + noise, 0.1 * i - noise];
            d.push(&y, &x);
            dd.push(&y, &x);
            dd.push(&y, &x);
        }
        let a = segment_ols(&d, 1, 13).unwrap();
        let b = segment_ols(&dd, 1, 25).unwrap();
        assert!((a.beta - b.beta).abs() < 1e-12);
        // X'X and RSS both double; only the degrees of freedom (22 vs 46)
        // keep the ratio from being exactly 1/sqrt(2).
        let ratio = (22.0_f64 / 46.0).sqrt();
        assert!((b.se_beta / a.se_beta - ratio).abs() < 1e-10);
        assert!((b.se_gamma / a.se_gamma - ratio).abs() < 1e-10);
    }

    #[test]
    fn grid_search_ties_go_to_smallest_a() {
        let s = sir_path("x", 120, 60, 1e6);
        let cfg = model1_cfg();
        let fit = fit_underreporting(&s, &cfg, &[0.3, 0.0, 0.2]).unwrap();
        // No reporting family: every a gives the same fit.
        assert_eq!(fit.best, 0.0);
        assert!(fit.mrpe.iter().all(|v| *v == fit.mrpe[0]));
    }
}
