//! Epidemic series, the under-reporting transform and the SIR regression rows.
//!
//! Days are 1-based throughout the public API: day `t` of a series lives at
//! vector index `t - 1`, and a series of length `T` yields regression rows
//! for `t = 1..T-1`.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};

/// Observed cumulative infected and recovered counts for one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpidemicSeries {
    pub region_id: String,
    pub dates: Vec<NaiveDate>,
    pub infected: Vec<f64>,
    pub recovered: Vec<f64>,
    pub population: f64,
}

impl EpidemicSeries {
    pub fn new(
        region_id: impl Into<String>,
        dates: Vec<NaiveDate>,
        infected: Vec<f64>,
        recovered: Vec<f64>,
        population: f64,
    ) -> Result<Self> {
        let s = Self {
            region_id: region_id.into(),
            dates,
            infected,
            recovered,
            population,
        };
        s.validate()?;
        Ok(s)
    }

    /// Builds a series with consecutive dates starting at `start`.
    pub fn from_counts(
        region_id: impl Into<String>,
        start: NaiveDate,
        infected: Vec<f64>,
        recovered: Vec<f64>,
        population: f64,
    ) -> Result<Self> {
        let dates = start.iter_days().take(infected.len()).collect();
        Self::new(region_id, dates, infected, recovered, population)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dates.len();
        if self.infected.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: self.infected.len(),
            });
        }
        if self.recovered.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: self.recovered.len(),
            });
        }
        if n < 3 {
            return Err(Error::InvalidSeries(format!(
                "{}: {n} days, need at least 3",
                self.region_id
            )));
        }
        if !self.population.is_finite() || self.population <= 0.0 {
            return Err(Error::InvalidSeries(format!(
                "{}: population must be positive",
                self.region_id
            )));
        }
        if self.infected.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("infected"));
        }
        if self.recovered.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("recovered"));
        }
        for t in 0..n {
            let (i, r) = (self.infected[t], self.recovered[t]);
            if i < 0.0 || r < 0.0 {
                return Err(Error::InvalidSeries(format!(
                    "{}: negative count on {}",
                    self.region_id, self.dates[t]
                )));
            }
            if i + r > self.population * (1.0 + 1e-12) {
                return Err(Error::InvalidSeries(format!(
                    "{}: I + R exceeds N on {}",
                    self.region_id, self.dates[t]
                )));
            }
        }
        for w in self.dates.windows(2) {
            if w[0].succ_opt() != Some(w[1]) {
                return Err(Error::InvalidSeries(format!(
                    "{}: dates not consecutive at {}",
                    self.region_id, w[1]
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Date of 1-based day `t`.
    pub fn date(&self, t: usize) -> NaiveDate {
        self.dates[t - 1]
    }

    /// `I(t+1) - I(t)` for 1-based `t`.
    pub fn delta_infected(&self, t: usize) -> f64 {
        self.infected[t] - self.infected[t - 1]
    }

    /// `R(t+1) - R(t)` for 1-based `t`.
    pub fn delta_recovered(&self, t: usize) -> f64 {
        self.recovered[t] - self.recovered[t - 1]
    }

    /// First `len` days.
    pub fn head(&self, len: usize) -> Result<Self> {
        self.window(1, len)
    }

    /// Days `first..first+len` (1-based `first`).
    pub fn window(&self, first: usize, len: usize) -> Result<Self> {
        if first == 0 || first - 1 + len > self.len() {
            return Err(Error::InvalidArgument(format!(
                "window {first}+{len} outside {} days",
                self.len()
            )));
        }
        let r = first - 1..first - 1 + len;
        Self::new(
            self.region_id.clone(),
            self.dates[r.clone()].to_vec(),
            self.infected[r.clone()].to_vec(),
            self.recovered[r].to_vec(),
            self.population,
        )
    }
}

/// Parametric family of the reporting-loss function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ReportingFamily {
    None,
    Quadratic { a: f64 },
    Exponential { a: f64, b: f64 },
}

/// Fraction `u(t)` of true new infections missing from the reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnderReporting {
    pub family: ReportingFamily,
    pub horizon: usize,
    /// Reporting is complete (`u = 0`) for days after this one.
    pub cutoff: Option<usize>,
}

impl UnderReporting {
    pub fn none() -> Self {
        Self {
            family: ReportingFamily::None,
            horizon: 1,
            cutoff: None,
        }
    }

    pub fn quadratic(a: f64, horizon: usize) -> Self {
        Self {
            family: ReportingFamily::Quadratic { a },
            horizon,
            cutoff: None,
        }
    }

    pub fn exponential(a: f64, b: f64, horizon: usize) -> Self {
        Self {
            family: ReportingFamily::Exponential { a, b },
            horizon,
            cutoff: None,
        }
    }

    pub fn with_cutoff(mut self, cutoff: Option<usize>) -> Self {
        self.cutoff = cutoff;
        self
    }

    /// Same family with the shape parameter `a` replaced.
    pub fn with_a(mut self, a: f64) -> Self {
        self.family = match self.family {
            ReportingFamily::None => ReportingFamily::None,
            ReportingFamily::Quadratic { .. } => ReportingFamily::Quadratic { a },
            ReportingFamily::Exponential { b, .. } => ReportingFamily::Exponential { a, b },
        };
        self
    }

    pub fn a(&self) -> Option<f64> {
        match self.family {
            ReportingFamily::None => None,
            ReportingFamily::Quadratic { a } | ReportingFamily::Exponential { a, .. } => Some(a),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self.family, ReportingFamily::None)
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            ReportingFamily::None => Ok(()),
            ReportingFamily::Quadratic { a } => {
                if !(a.is_finite() && a > 0.0) || self.horizon == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "quadratic under-reporting needs a > 0 and T > 0, got a = {a}"
                    )));
                }
                Ok(())
            }
            ReportingFamily::Exponential { a, b } => {
                if !(a.is_finite() && a > 0.0 && b.is_finite() && b >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "exponential under-reporting needs a > 0, b >= 0, got a = {a}, b = {b}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// `u(t)` for 1-based day `t`. The quadratic form is held at 0 past `T`.
    pub fn u(&self, t: usize) -> f64 {
        if self.cutoff.is_some_and(|c| t > c) {
            return 0.0;
        }
        let t = t as f64;
        match self.family {
            ReportingFamily::None => 0.0,
            ReportingFamily::Quadratic { a } => {
                let big_t = self.horizon as f64;
                let r = (t + a * big_t) / ((1.0 + a) * big_t);
                (1.0 - r * r).max(0.0)
            }
            ReportingFamily::Exponential { a, b } => 1.0 - 1.0 / (1.0 + b * (-a * (t - 1.0)).exp()),
        }
    }

    /// `1 - u(t)`, failing when reporting would be total loss.
    pub fn reported_fraction(&self, t: usize) -> Result<f64> {
        let u = self.u(t);
        if !(u < 1.0) {
            return Err(Error::UnderReportingSingular { day: t, value: u });
        }
        Ok(1.0 - u)
    }
}

impl Default for UnderReporting {
    fn default() -> Self {
        Self::none()
    }
}

/// One day of the SIR regression `Y_t = X_t (beta, gamma)' + e_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirDesignRow {
    pub y: [f64; 2],
    pub x: [[f64; 2]; 2],
}

impl SirDesignRow {
    pub fn new(dif: f64, dr: f64, s: f64, i_f: f64, n: f64) -> Self {
        Self {
            y: [dif, dr],
            x: [[s * i_f / n, -i_f], [0.0, i_f]],
        }
    }

    pub fn predict(&self, beta: f64, gamma: f64) -> [f64; 2] {
        [
            self.x[0][0] * beta + self.x[0][1] * gamma,
            self.x[1][1] * gamma,
        ]
    }
}

/// Rates on the half-open day range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    pub start: usize,
    pub end: usize,
    pub beta: f64,
    pub gamma: f64,
}

impl SegmentParams {
    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t < self.end
    }

    pub fn days(&self) -> usize {
        self.end - self.start
    }

    /// Basic reproduction number `beta / gamma`.
    pub fn r0(&self) -> f64 {
        self.beta / self.gamma
    }
}

/// Segment covering day `t`, falling back to the last one past the end.
pub fn segment_at(segments: &[SegmentParams], t: usize) -> &SegmentParams {
    segments
        .iter()
        .find(|s| s.contains(t))
        .unwrap_or_else(|| segments.last().expect("at least one segment"))
}

/// Regression rows together with the transform that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SirDesign {
    pub rows: Vec<SirDesignRow>,
    /// `I_f(t)` for every day of the series.
    pub true_infected: Vec<f64>,
    /// Days on which `N - I_f - R` went negative and was clamped to 0.
    pub clamped_days: Vec<usize>,
}

impl SirDesign {
    pub fn to_design(&self) -> Design {
        rows_to_design(&self.rows)
    }
}

pub fn rows_to_design(rows: &[SirDesignRow]) -> Design {
    let mut d = Design::new(2, 2);
    for r in rows {
        d.push(&r.y, &[r.x[0][0], r.x[0][1], r.x[1][0], r.x[1][1]]);
    }
    d
}

/// Undoes the reporting loss: `I_f(1) = I(1)/(1-u(1))` and
/// `I_f(t) = I_f(t-1) + (I(t) - I(t-1))/(1-u(t))`.
pub fn to_true_infected(series: &EpidemicSeries, u: &UnderReporting) -> Result<Vec<f64>> {
    if series.infected.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("infected"));
    }
    let mut out = Vec::with_capacity(series.len());
    out.push(series.infected[0] / u.reported_fraction(1)?);
    for t in 2..=series.len() {
        let inc = series.infected[t - 1] - series.infected[t - 2];
        let prev = out[t - 2];
        out.push(prev + inc / u.reported_fraction(t)?);
    }
    Ok(out)
}

/// Builds the regression rows for days `1..T-1`.
pub fn build_design(series: &EpidemicSeries, u: &UnderReporting) -> Result<SirDesign> {
    let i_f = to_true_infected(series, u)?;
    let n = series.population;
    let mut rows = Vec::with_capacity(series.len() - 1);
    let mut clamped_days = Vec::new();
    for t in 1..series.len() {
        let (it, rt) = (i_f[t - 1], series.recovered[t - 1]);
        let mut s = n - it - rt;
        if s < 0.0 {
            s = 0.0;
            clamped_days.push(t);
        }
        let dif = i_f[t] - it;
        let dr = series.delta_recovered(t);
        rows.push(SirDesignRow::new(dif, dr, s, it, n));
    }
    Ok(SirDesign {
        rows,
        true_infected: i_f,
        clamped_days,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn day0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 3, 1).unwrap()
    }

    fn series(i: Vec<f64>, r: Vec<f64>, n: f64) -> EpidemicSeries {
        EpidemicSeries::from_counts("x", day0(), i, r, n).unwrap()
    }

    #[test]
    fn identity_transform_without_under_reporting() {
        let s = series(vec![10.0, 15.0, 22.0], vec![0.0; 3], 1000.0);
        let i_f = to_true_infected(&s, &UnderReporting::none()).unwrap();
        assert_eq!(i_f, vec![10.0, 15.0, 22.0]);
    }

    #[test]
    fn exponential_transform_matches_scalar_evaluation() {
        // a = 0.05, b = 10: u(1) = 10/11, u(2) = 1 - 1/(1 + 10 e^-0.05).
        // Reference values from an independent double-precision evaluation.
        let s = series(vec![1.0, 2.0, 2.0], vec![0.0; 3], 100.0);
        let u = UnderReporting::exponential(0.05, 10.0, 200);
        let i_f = to_true_infected(&s, &u).unwrap();
        assert!((i_f[0] - 11.0).abs() < 1e-12);
        assert!((i_f[1] - 21.512_294_245_007_14).abs() < 1e-9);
    }

    #[test]
    fn quadratic_u_is_in_unit_interval_and_zero_at_horizon() {
        let u = UnderReporting::quadratic(0.5, 200);
        for t in 1..=200 {
            let v = u.u(t);
            assert!((0.0..1.0).contains(&v), "u({t}) = {v}");
        }
        assert!(u.u(200).abs() < 1e-15);
        assert_eq!(u.u(260), 0.0);
    }

    #[test]
    fn cutoff_forces_complete_reporting() {
        let u = UnderReporting::exponential(0.05, 10.0, 100).with_cutoff(Some(5));
        assert!(u.u(5) > 0.0);
        assert_eq!(u.u(6), 0.0);
    }

    #[test]
    fn singular_reporting_is_rejected() {
        let s = series(vec![1.0, 2.0, 3.0], vec![0.0; 3], 100.0);
        // b = inf drives u(1) to 1.
        let u = UnderReporting::exponential(0.05, f64::INFINITY, 10);
        assert!(matches!(
            to_true_infected(&s, &u),
            Err(Error::UnderReportingSingular { day: 1, .. })
        ));
    }

    #[test]
    fn three_day_design_by_hand() {
        // N = 100, I = (1, 2, 4), R = (0, 0, 1).
        // t = 1: S = 99, x = [[0.99, -1], [0, 1]], y = (1, 0)
        // t = 2: S = 98, x = [[1.96, -2], [0, 2]], y = (2, 1)
        let s = series(vec![1.0, 2.0, 4.0], vec![0.0, 0.0, 1.0], 100.0);
        let d = build_design(&s, &UnderReporting::none()).unwrap();
        assert_eq!(d.rows.len(), 2);
        assert_eq!(d.rows[0].y, [1.0, 0.0]);
        assert_eq!(d.rows[0].x, [[0.99, -1.0], [0.0, 1.0]]);
        assert_eq!(d.rows[1].y, [2.0, 1.0]);
        assert_eq!(d.rows[1].x, [[1.96, -2.0], [0.0, 2.0]]);
        assert!(d.clamped_days.is_empty());
    }

    #[test]
    fn zero_infection_row_is_zero_matrix() {
        let s = series(vec![0.0, 0.0, 3.0], vec![0.0, 2.0, 2.0], 100.0);
        let d = build_design(&s, &UnderReporting::none()).unwrap();
        assert_eq!(d.rows[0].x, [[0.0, 0.0], [0.0, 0.0]]);
        assert_eq!(d.rows[0].y[1], 2.0);
    }

    #[test]
    fn negative_susceptibles_are_clamped_and_reported() {
        let s = series(vec![50.0, 60.0, 70.0], vec![0.0; 3], 100.0);
        let u = UnderReporting::exponential(0.05, 10.0, 10);
        let d = build_design(&s, &u).unwrap();
        assert!(!d.clamped_days.is_empty());
        for &t in &d.clamped_days {
            assert_eq!(d.rows[t - 1].x[0][0], 0.0);
        }
    }

    #[test]
    fn series_validation() {
        let bad = EpidemicSeries::from_counts("x", day0(), vec![1.0, 2.0], vec![0.0; 2], 10.0);
        assert!(matches!(bad, Err(Error::InvalidSeries(_))));
        let over = EpidemicSeries::from_counts("x", day0(), vec![1.0, 2.0, 9.0], vec![0.0, 0.0, 5.0], 10.0);
        assert!(matches!(over, Err(Error::InvalidSeries(_))));
        let nan = EpidemicSeries::from_counts("x", day0(), vec![1.0, f64::NAN, 9.0], vec![0.0; 3], 10.0);
        assert!(matches!(nan, Err(Error::NonFiniteInput(_))));
        let mut gap = series(vec![1.0, 2.0, 3.0], vec![0.0; 3], 10.0);
        gap.dates[2] = gap.dates[2].succ_opt().unwrap();
        assert!(gap.validate().is_err());
    }

    fn arb_series() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.0f64..500.0, n),
                proptest::collection::vec(0.0f64..50.0, n),
            )
        })
    }

    fn arb_u() -> impl Strategy<Value = UnderReporting> {
        prop_oneof![
            Just(UnderReporting::none()),
            (0.05f64..2.0, 20usize..300).prop_map(|(a, t)| UnderReporting::quadratic(a, t)),
            (0.01f64..0.5, 0.0f64..20.0).prop_map(|(a, b)| UnderReporting::exponential(a, b, 100)),
        ]
    }

    proptest! {
        #[test]
        fn transform_round_trips_increments((inc, rinc) in arb_series(), u in arb_u()) {
            let mut i = Vec::new();
            let mut r = Vec::new();
            let (mut ci, mut cr) = (1.0, 0.0);
            for (a, b) in inc.iter().zip(&rinc) {
                ci += a;
                cr += b;
                i.push(ci);
                r.push(cr);
            }
            let s = series(i, r, 1e9);
            let i_f = to_true_infected(&s, &u).unwrap();
            prop_assert_eq!(i_f.len(), s.len());
            for t in 1..s.len() {
                let back = (i_f[t] - i_f[t - 1]) * (1.0 - u.u(t + 1));
                let obs = s.delta_infected(t);
                prop_assert!((back - obs).abs() <= 1e-9 * obs.abs().max(1.0));
                // Nondecreasing observed counts never lose infections.
                prop_assert!(i_f[t] >= s.infected[t] - 1e-9);
            }
        }

        #[test]
        fn design_rows_have_sir_structure(
            (inc, rinc) in arb_series(),
            u in arb_u(),
            beta in 0.0f64..1.0,
            gamma in 0.0f64..1.0,
        ) {
            let mut i = Vec::new();
            let mut r = Vec::new();
            let (mut ci, mut cr) = (1.0, 0.0);
            for (a, b) in inc.iter().zip(&rinc) {
                ci += a;
                cr += b;
                i.push(ci);
                r.push(cr);
            }
            let s = series(i, r, 1e6);
            let d = build_design(&s, &u).unwrap();
            for (k, row) in d.rows.iter().enumerate() {
                prop_assert_eq!(row.x[1][0], 0.0);
                prop_assert_eq!(row.x[0][1], -row.x[1][1]);
                prop_assert_eq!(row.predict(beta, gamma)[1], gamma * d.true_infected[k]);
                let sus = row.x[0][0] * s.population / d.true_infected[k].max(f64::MIN_POSITIVE);
                if !d.clamped_days.contains(&(k + 1)) && d.true_infected[k] > 0.0 {
                    let total = sus + d.true_infected[k] + s.recovered[k];
                    prop_assert!((total - s.population).abs() <= 1e-6 * s.population);
                }
            }
        }
    }
}
