//! Small dense least-squares helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ordinary least-squares fit of `y = X b + e`.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coef: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
    /// `(X'X)^{-1}` on the original column scale.
    pub xtx_inv: DMatrix<f64>,
    pub nobs: usize,
}

impl OlsFit {
    /// Residual variance `RSS / (nobs - ncoef)`.
    pub fn sigma2(&self) -> f64 {
        let df = self.nobs.saturating_sub(self.coef.len());
        if df == 0 {
            f64::NAN
        } else {
            self.rss / df as f64
        }
    }

    /// Standard errors `sqrt(diag((X'X)^{-1}) * sigma2)`.
    pub fn standard_errors(&self) -> Vec<f64> {
        let s2 = self.sigma2();
        (0..self.coef.len())
            .map(|j| (self.xtx_inv[(j, j)] * s2).sqrt())
            .collect()
    }
}

/// Solves least squares through a column-equilibrated Householder QR.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: y.len(),
        });
    }
    if n < p || p == 0 {
        return Err(Error::SingularDesign(format!(
            "{n} observations for {p} coefficients"
        )));
    }

    let mut scaled = x.clone();
    let mut norms = vec![1.0; p];
    for j in 0..p {
        let norm = x.column(j).norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::SingularDesign(format!("column {j} is zero")));
        }
        norms[j] = norm;
        scaled.column_mut(j).scale_mut(1.0 / norm);
    }

    let qr = scaled.qr();
    let r = qr.r();
    let q = qr.q();
    let rmax = (0..p).map(|i| r[(i, i)].abs()).fold(0.0_f64, f64::max);
    for i in 0..p {
        if r[(i, i)].abs() <= 1e-12 * rmax.max(f64::MIN_POSITIVE) {
            return Err(Error::SingularDesign(format!(
                "rank deficient at column {i}"
            )));
        }
    }

    let qty = q.transpose() * y;
    let b_scaled = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularDesign("triangular solve failed".into()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::SingularDesign("triangular inverse failed".into()))?;
    let mut xtx_inv = &r_inv * r_inv.transpose();
    for i in 0..p {
        for j in 0..p {
            xtx_inv[(i, j)] /= norms[i] * norms[j];
        }
    }

    let coef: Vec<f64> = (0..p).map(|j| b_scaled[j] / norms[j]).collect();
    let fitted = x * DVector::from_column_slice(&coef);
    let residuals: Vec<f64> = (y - fitted).iter().copied().collect();
    let rss = residuals.iter().map(|e| e * e).sum();

    Ok(OlsFit {
        coef,
        residuals,
        rss,
        xtx_inv,
        nobs: n,
    })
}

/// Two-sided p-value of a z statistic under the standard normal.
pub fn normal_two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2)
}
