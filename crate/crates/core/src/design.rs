//! Stacked multi-response regression designs.
//!
//! A [`Design`] holds `n` time points; each contributes `resp_dim` responses
//! and a `resp_dim x n_coef` regressor block, so the stacked system has
//! `n * resp_dim` scalar rows sharing one coefficient vector. The SIR
//! regression uses `resp_dim = n_coef = 2`; the VAR break screen uses
//! `n_coef = 4p`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    resp_dim: usize,
    n_coef: usize,
    y: Vec<f64>,
    x: Vec<f64>,
}

impl Design {
    pub fn new(resp_dim: usize, n_coef: usize) -> Self {
        assert!(resp_dim > 0 && n_coef > 0, "empty design shape");
        Self {
            resp_dim,
            n_coef,
            y: Vec::new(),
            x: Vec::new(),
        }
    }

    /// Appends one time point. `x` is row-major `resp_dim x n_coef`.
    pub fn push(&mut self, y: &[f64], x: &[f64]) {
        assert_eq!(y.len(), self.resp_dim);
        assert_eq!(x.len(), self.resp_dim * self.n_coef);
        self.y.extend_from_slice(y);
        self.x.extend_from_slice(x);
    }

    pub fn len(&self) -> usize {
        self.y.len() / self.resp_dim
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn resp_dim(&self) -> usize {
        self.resp_dim
    }

    pub fn n_coef(&self) -> usize {
        self.n_coef
    }

    /// Number of stacked scalar observations.
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    /// Responses at time point `t` (0-based).
    pub fn y(&self, t: usize) -> &[f64] {
        &self.y[t * self.resp_dim..(t + 1) * self.resp_dim]
    }

    /// Regressor block at time point `t` (0-based), row-major.
    pub fn x(&self, t: usize) -> &[f64] {
        let w = self.resp_dim * self.n_coef;
        &self.x[t * w..(t + 1) * w]
    }

    pub fn slice(&self, range: Range<usize>) -> Design {
        let w = self.resp_dim * self.n_coef;
        Design {
            resp_dim: self.resp_dim,
            n_coef: self.n_coef,
            y: self.y[range.start * self.resp_dim..range.end * self.resp_dim].to_vec(),
            x: self.x[range.start * w..range.end * w].to_vec(),
        }
    }

    /// `X_t b` for time point `t`.
    pub fn predict(&self, t: usize, coef: &[f64]) -> Vec<f64> {
        let x = self.x(t);
        (0..self.resp_dim)
            .map(|i| {
                x[i * self.n_coef..(i + 1) * self.n_coef]
                    .iter()
                    .zip(coef)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `||Y_t - X_t b||^2`.
    pub fn sq_error(&self, t: usize, coef: &[f64]) -> f64 {
        let x = self.x(t);
        let y = self.y(t);
        let mut acc = 0.0;
        for i in 0..self.resp_dim {
            let fit: f64 = x[i * self.n_coef..(i + 1) * self.n_coef]
                .iter()
                .zip(coef)
                .map(|(a, b)| a * b)
                .sum();
            let e = y[i] - fit;
            acc += e * e;
        }
        acc
    }

    /// Stacked regressor column `c` (length `n_obs`).
    pub fn column(&self, c: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_obs());
        for t in 0..self.len() {
            let x = self.x(t);
            for i in 0..self.resp_dim {
                out.push(x[i * self.n_coef + c]);
            }
        }
        out
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    pub fn is_finite(&self) -> bool {
        self.y.iter().chain(&self.x).all(|v| v.is_finite())
    }

    fn scaled(&self, y_scale: f64, x_scales: &[f64]) -> Design {
        let mut out = self.clone();
        out.y.iter_mut().for_each(|v| *v /= y_scale);
        for (k, v) in out.x.iter_mut().enumerate() {
            *v /= x_scales[k % self.n_coef];
        }
        out
    }
}

/// Divisors applied by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingInfo {
    pub y_scale: f64,
    pub x_scales: Vec<f64>,
    /// True when the stacked response had zero variance and was left unscaled.
    pub y_degenerate: bool,
    /// Regressor columns left unscaled because their variance was zero.
    pub degenerate_columns: Vec<usize>,
}

impl ScalingInfo {
    pub fn identity(n_coef: usize) -> Self {
        Self {
            y_scale: 1.0,
            x_scales: vec![1.0; n_coef],
            y_degenerate: false,
            degenerate_columns: Vec::new(),
        }
    }

    /// Maps coefficients of the scaled system back to the raw scale.
    pub fn unscale_coef(&self, scaled: &[f64]) -> Vec<f64> {
        scaled
            .iter()
            .enumerate()
            .map(|(c, b)| b * self.y_scale / self.x_scales[c % self.x_scales.len()])
            .collect()
    }

    /// Maps raw-scale coefficients into the scaled system.
    pub fn scale_coef(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(c, b)| b * self.x_scales[c % self.x_scales.len()] / self.y_scale)
            .collect()
    }
}

/// Sample standard deviation with the `n - 1` denominator.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Divides the stacked response and every stacked regressor column by its
/// sample standard deviation. Zero-variance columns keep divisor 1.
pub fn standardize(design: &Design) -> (Design, ScalingInfo) {
    let usable = |s: f64| s.is_finite() && s > 0.0;
    let sy = sample_std(design.responses());
    let mut info = ScalingInfo::identity(design.n_coef());
    if usable(sy) {
        info.y_scale = sy;
    } else {
        info.y_degenerate = true;
    }
    for c in 0..design.n_coef() {
        let s = sample_std(&design.column(c));
        if usable(s) {
            info.x_scales[c] = s;
        } else {
            info.degenerate_columns.push(c);
        }
    }
    (design.scaled(info.y_scale, &info.x_scales), info)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_design(rng: &mut ChaCha8Rng, n: usize) -> Design {
        let mut d = Design::new(2, 2);
        for _ in 0..n {
            let a: f64 = rng.random_range(0.0..50.0);
            let c: f64 = rng.random_range(0.0..20.0);
            d.push(
                &[rng.random_range(-5.0..5.0), rng.random_range(0.0..9.0)],
                &[a, -c, 0.0, c],
            );
        }
        d
    }

    #[test]
    fn scaled_columns_have_unit_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = random_design(&mut rng, 50);
        let (s, info) = standardize(&d);
        assert!((sample_std(s.responses()) - 1.0).abs() < 1e-10);
        for c in 0..2 {
            assert!((sample_std(&s.column(c)) - 1.0).abs() < 1e-10);
        }
        assert!(info.degenerate_columns.is_empty());
    }

    #[test]
    fn unit_variance_input_is_unchanged() {
        // Stacked values (1, -1, 1, -1, ...) have sample std sqrt(n/(n-1)),
        // so build the column from a vector with exactly unit sample std.
        let vals = [-1.0, 1.0, -1.0, 1.0];
        let s = sample_std(&vals);
        let mut d = Design::new(2, 1);
        d.push(&[vals[0] / s, vals[1] / s], &[vals[0] / s, vals[1] / s]);
        d.push(&[vals[2] / s, vals[3] / s], &[vals[2] / s, vals[3] / s]);
        let (scaled, info) = standardize(&d);
        assert!((info.y_scale - 1.0).abs() < 1e-15);
        assert!((info.x_scales[0] - 1.0).abs() < 1e-15);
        for t in 0..2 {
            for (a, b) in scaled.y(t).iter().zip(d.y(t)) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_variance_column_is_flagged() {
        let mut d = Design::new(2, 2);
        d.push(&[1.0, 2.0], &[3.0, 0.0, 1.0, 0.0]);
        d.push(&[2.0, 5.0], &[4.0, 0.0, 7.0, 0.0]);
        let (_, info) = standardize(&d);
        assert_eq!(info.degenerate_columns, vec![1]);
        assert_eq!(info.x_scales[1], 1.0);
    }

    proptest! {
        #[test]
        fn scale_unscale_round_trip(
            b in proptest::collection::vec(-100.0f64..100.0, 2),
            sy in 0.01f64..1e4,
            sx0 in 0.01f64..1e4,
            sx1 in 0.01f64..1e4,
        ) {
            let info = ScalingInfo {
                y_scale: sy,
                x_scales: vec![sx0, sx1],
                y_degenerate: false,
                degenerate_columns: vec![],
            };
            let back = info.unscale_coef(&info.scale_coef(&b));
            for (a, c) in back.iter().zip(&b) {
                prop_assert!((a - c).abs() <= 1e-12 * c.abs().max(1.0));
            }
        }

        #[test]
        fn scaled_fit_maps_back_to_raw_prediction(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = random_design(&mut rng, 10);
            let (s, info) = standardize(&d);
            let raw = [0.07, 0.03];
            let scaled = info.scale_coef(&raw);
            for t in 0..d.len() {
                let p_raw = d.predict(t, &raw);
                let p_scaled = s.predict(t, &scaled);
                for i in 0..2 {
                    prop_assert!((p_scaled[i] * info.y_scale - p_raw[i]).abs() <= 1e-9 * p_raw[i].abs().max(1.0));
                }
            }
        }
    }
}
