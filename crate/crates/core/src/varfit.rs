//! VAR(p) models for the two-dimensional regression residuals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::detect::{scan, DetectConfig};
use crate::diag::Warning;
use crate::error::{Error, Result};
use crate::linalg::ols;

pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarModel {
    pub p: usize,
    /// `phi[i]` multiplies the residual `i + 1` days back.
    pub phi: Vec<Mat2>,
    pub noise_cov: Mat2,
    /// First residual day (1-based) of the segment the coefficients were fit on.
    pub segment_start: usize,
    /// Residual days at which the VAR coefficients were found to change.
    pub breaks: Vec<usize>,
    pub bic: Vec<f64>,
    pub warnings: Vec<Warning>,
}

impl VarModel {
    pub fn white_noise(cov: Mat2) -> Self {
        Self {
            p: 0,
            phi: Vec::new(),
            noise_cov: cov,
            segment_start: 1,
            breaks: Vec::new(),
            bic: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Conditional mean given `history`, most recent residual last.
    pub fn predict(&self, history: &[[f64; 2]]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (i, phi) in self.phi.iter().enumerate() {
            let Some(e) = history.len().checked_sub(i + 1).map(|k| history[k]) else {
                break;
            };
            for r in 0..2 {
                out[r] += phi[r][0] * e[0] + phi[r][1] * e[1];
            }
        }
        out
    }
}

/// Lag matrix rows `[e_{t-1}, ..., e_{t-p}]` for `t` in `first..len` (0-based).
fn lag_system(res: &[[f64; 2]], p: usize, first: usize) -> (DMatrix<f64>, [DVector<f64>; 2]) {
    let rows = res.len() - first;
    let mut x = DMatrix::zeros(rows, 2 * p);
    let mut y0 = DVector::zeros(rows);
    let mut y1 = DVector::zeros(rows);
    for (k, t) in (first..res.len()).enumerate() {
        y0[k] = res[t][0];
        y1[k] = res[t][1];
        for i in 0..p {
            x[(k, 2 * i)] = res[t - i - 1][0];
            x[(k, 2 * i + 1)] = res[t - i - 1][1];
        }
    }
    (x, [y0, y1])
}

struct LagFit {
    phi: Vec<Mat2>,
    resid: [Vec<f64>; 2],
}

fn fit_lags(res: &[[f64; 2]], p: usize, first: usize) -> Result<LagFit> {
    let (x, ys) = lag_system(res, p, first);
    if p == 0 {
        return Ok(LagFit {
            phi: Vec::new(),
            resid: [ys[0].iter().copied().collect(), ys[1].iter().copied().collect()],
        });
    }
    let mut phi = vec![[[0.0; 2]; 2]; p];
    let mut resid = [Vec::new(), Vec::new()];
    for (r, y) in ys.iter().enumerate() {
        let fit = ols(&x, y).map_err(|_| Error::SingularLagMatrix(p))?;
        for i in 0..p {
            phi[i][r] = [fit.coef[2 * i], fit.coef[2 * i + 1]];
        }
        resid[r] = fit.residuals;
    }
    Ok(LagFit { phi, resid })
}

fn cross_cov(resid: &[Vec<f64>; 2], denom: f64) -> Mat2 {
    let mut s = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            s[a][b] = resid[a].iter().zip(&resid[b]).map(|(u, v)| u * v).sum::<f64>() / denom;
        }
    }
    s
}

fn ln_det(s: &Mat2) -> f64 {
    let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    if det > 0.0 {
        det.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Chooses `p` in `0..=p_max` by `ln det(Sigma) + 4p ln(n)/n` on the common
/// sample after `p_max` lags, then refits by per-equation least squares.
pub fn fit_var(residuals: &[[f64; 2]], p_max: usize) -> Result<VarModel> {
    let n = residuals.len();
    if n <= 10 * p_max || n < 3 {
        return Err(Error::InsufficientData(format!(
            "{n} residuals for lag order up to {p_max}"
        )));
    }
    if residuals.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("residuals"));
    }
    let n_eff = (n - p_max) as f64;
    let mut bic = vec![f64::INFINITY; p_max + 1];
    for (p, slot) in bic.iter_mut().enumerate() {
        if let Ok(fit) = fit_lags(residuals, p, p_max) {
            let cov = cross_cov(&fit.resid, n_eff);
            *slot = ln_det(&cov) + (4 * p) as f64 * n_eff.ln() / n_eff;
        }
    }
    let mut best = 0;
    for p in 1..=p_max {
        if bic[p] < bic[best] {
            best = p;
        }
    }
    let mut model = refit(residuals, best, 0)?;
    model.bic = bic;
    Ok(model)
}

/// Least-squares VAR(p) on `residuals[start..]`, lowering `p` while the lag
/// matrix is singular.
fn refit(residuals: &[[f64; 2]], p: usize, start: usize) -> Result<VarModel> {
    let seg = &residuals[start..];
    let mut warnings = Vec::new();
    let mut q = p;
    loop {
        match fit_lags(seg, q, q) {
            Ok(fit) => {
                let dof = (seg.len() - q).saturating_sub(2 * q).max(1) as f64;
                return Ok(VarModel {
                    p: q,
                    phi: fit.phi,
                    noise_cov: cross_cov(&fit.resid, dof),
                    segment_start: start + 1,
                    breaks: Vec::new(),
                    bic: Vec::new(),
                    warnings,
                });
            }
            Err(Error::SingularLagMatrix(_)) if q > 0 => {
                warnings.push(Warning::LagFallback { from: q, to: q - 1 });
                q -= 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// The VAR regression as a stacked design: responses `e_t`, regressors
/// `I_2 (x) [e_{t-1}, ..., e_{t-p}]`, rows for residual days `p+1..n`.
pub fn var_design(residuals: &[[f64; 2]], p: usize) -> Design {
    let d = 4 * p;
    let mut design = Design::new(2, d);
    let mut x = vec![0.0; 2 * d];
    for t in p..residuals.len() {
        x.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..p {
            for c in 0..2 {
                let v = residuals[t - i - 1][c];
                x[2 * i + c] = v;
                x[d + 2 * p + 2 * i + c] = v;
            }
        }
        design.push(&residuals[t], &x);
    }
    design
}

/// Screens the VAR coefficients for breaks with the change-point stack; when
/// any are found the model is refit on the last segment.
pub fn screen_var_breaks(residuals: &[[f64; 2]], model: &VarModel, config: &DetectConfig) -> Result<VarModel> {
    if model.p == 0 {
        return Err(Error::InvalidArgument("break screening needs p >= 1".into()));
    }
    let p = model.p;
    let design = var_design(residuals, p);
    let scan = scan(&design, config)?;
    let breaks: Vec<usize> = scan.points().iter().map(|s| s + p).collect();
    let Some(&last) = breaks.last() else {
        return Ok(model.clone());
    };
    let start = last - 1;
    let mut out = if residuals.len() - start > 10 * p {
        let mut m = refit(residuals, p, start)?;
        m.warnings.splice(0..0, model.warnings.iter().cloned());
        m
    } else {
        model.clone()
    };
    out.breaks = breaks;
    out.bic = model.bic.clone();
    out.warnings.extend(scan.warnings);
    Ok(out)
}

/// Sample autocorrelations `rho(0..=max_lag)` per coordinate (demeaned,
/// `1/n` autocovariances).
pub fn residual_acf(residuals: &[[f64; 2]], max_lag: usize) -> Vec<[f64; 2]> {
    let n = residuals.len();
    let mut out = vec![[0.0; 2]; max_lag + 1];
    for c in 0..2 {
        let mean = residuals.iter().map(|e| e[c]).sum::<f64>() / n as f64;
        let x: Vec<f64> = residuals.iter().map(|e| e[c] - mean).collect();
        let g0: f64 = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
        for h in 0..=max_lag.min(n.saturating_sub(1)) {
            let gh: f64 = (h..n).map(|t| x[t] * x[t - h]).sum::<f64>() / n as f64;
            out[h][c] = if g0 > 0.0 { gh / g0 } else if h == 0 { 1.0 } else { 0.0 };
        }
    }
    out
}

/// Share of `|rho(h)|`, `h = 1..=max_lag`, outside `2/sqrt(n)` over both coordinates.
pub fn out_of_band_fraction(residuals: &[[f64; 2]], max_lag: usize) -> f64 {
    let band = 2.0 / (residuals.len() as f64).sqrt();
    let acf = residual_acf(residuals, max_lag);
    let outside = acf[1..].iter().flatten().filter(|r| r.abs() > band).count();
    outside as f64 / (2 * max_lag) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn simulate(phi: &[Mat2], n: usize, sd: f64, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out: Vec<[f64; 2]> = Vec::with_capacity(n + 100);
        let m = VarModel::white_noise([[0.0; 2]; 2]);
        let m = VarModel { p: phi.len(), phi: phi.to_vec(), ..m };
        for _ in 0..n + 100 {
            let mut e = m.predict(&out);
            for v in e.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += sd * z;
            }
            out.push(e);
        }
        out.split_off(100)
    }

    const PHI: Mat2 = [[0.8, 0.0], [0.2, 0.7]];

    #[test]
    fn white_noise_selects_zero_lags() {
        let e = simulate(&[], 400, 1.0, 3);
        let m = fit_var(&e, 7).unwrap();
        assert_eq!(m.p, 0);
        assert!(m.phi.is_empty());
    }

    #[test]
    fn var1_recovered() {
        let e = simulate(&[PHI], 2000, 0.3, 4);
        let m = fit_var(&e, 7).unwrap();
        assert_eq!(m.p, 1);
        for r in 0..2 {
            for c in 0..2 {
                assert!((m.phi[0][r][c] - PHI[r][c]).abs() < 0.05);
            }
        }
        assert!((m.noise_cov[0][0] - 0.09).abs() < 0.015);
    }

    #[test]
    fn noiseless_var1_is_exact() {
        // A deterministic path from a nonzero start has rank-2 lags.
        let m = VarModel {
            p: 1,
            phi: vec![PHI],
            ..VarModel::white_noise([[0.0; 2]; 2])
        };
        let mut e = vec![[1.0, -0.5], [0.3, 0.9]];
        for _ in 0..80 {
            let next = m.predict(&e);
            e.push(next);
        }
        // Rescale so later values do not underflow toward zero.
        let fit = refit(&e[1..40], 1, 0).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert!((fit.phi[0][r][c] - PHI[r][c]).abs() < 1e-8);
            }
        }
        let sel = fit_var(&e[1..40], 3).unwrap();
        assert_eq!(sel.p, 1);
    }

    #[test]
    fn acf_of_ar1() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = [0.0f64; 2];
        let mut e = Vec::new();
        for _ in 0..20000 {
            for v in x.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = 0.8 * *v + z;
            }
            e.push(x);
        }
        let acf = residual_acf(&e, 5);
        assert_eq!(acf[0], [1.0, 1.0]);
        for h in 1..=5 {
            for c in 0..2 {
                assert!((acf[h][c] - 0.8f64.powi(h as i32)).abs() < 0.04);
            }
        }
    }

    #[test]
    fn white_noise_acf_mostly_in_band() {
        let e = simulate(&[], 500, 1.0, 10);
        assert!(out_of_band_fraction(&e, 20) <= 0.1);
    }

    #[test]
    fn stationary_input_has_no_breaks() {
        let e = simulate(&[PHI], 300, 0.3, 12);
        let m = fit_var(&e, 7).unwrap();
        let cfg = DetectConfig {
            block_size: 8,
            ..Default::default()
        };
        let s = screen_var_breaks(&e, &m, &cfg).unwrap();
        assert!(s.breaks.is_empty(), "{:?}", s.breaks);
        assert_eq!(s.segment_start, 1);
    }

    #[test]
    fn regime_switch_is_located() {
        let mut e = simulate(&[PHI], 200, 0.3, 13);
        let flip: Mat2 = [[-0.7, 0.0], [0.0, -0.6]];
        let tail = simulate(&[flip], 200, 0.3, 14);
        e.extend(tail);
        let m = fit_var(&e, 3).unwrap();
        assert!(m.p >= 1);
        let cfg = DetectConfig {
            block_size: 8,
            ..Default::default()
        };
        let s = screen_var_breaks(&e, &m, &cfg).unwrap();
        assert_eq!(s.breaks.len(), 1, "{:?}", s.breaks);
        assert!(s.breaks[0].abs_diff(201) <= 16, "{:?}", s.breaks);
        assert_eq!(s.segment_start, s.breaks[0]);
        assert!((s.phi[0][0][0] + 0.7).abs() < 0.15);
    }
}
