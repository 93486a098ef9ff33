//! Synthetic epidemics for scenarios A to H and the replication harness.

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::sample_std;
use crate::detect::{in_success_interval, DetectConfig};
use crate::diag::Warning;
use crate::error::{Error, Result};
use crate::model::{segment_at, EpidemicSeries, UnderReporting};
use crate::pipeline::{fit, forecast, ForecastOptions, ModelVariant, PipelineConfig};
use crate::spatial::{RegionCatalog, WeightScheme};
use crate::varfit::Mat2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 8] = [Self::A, Self::B, Self::C, Self::D, Self::E, Self::F, Self::G, Self::H];
}

impl std::fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scenario {s}")))
    }
}

/// Neighbour epidemic feeding the spatial term. Its transmission rate falls
/// linearly from `beta_start` on day 0 to `beta_end` on day `T - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialSpec {
    pub beta_start: f64,
    pub beta_end: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub population: f64,
    pub initial_infected: f64,
}

/// Additive error on `Y_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    None,
    /// Gaussian with covariance `cov`, independent over days.
    White { cov: Mat2 },
    /// `e_t = sum_i phi_i e_{t-i} + w_t`, `w_t ~ N(0, cov)`.
    Var { phi: Vec<Mat2>, cov: Mat2 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: ScenarioId,
    /// Training days `T`.
    pub days: usize,
    /// Extra days generated after `T` for scoring forecasts.
    pub test_days: usize,
    pub breaks: Vec<usize>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Log-scale variance of the daily rate jitter; 0 keeps rates fixed.
    pub log_variance: f64,
    pub spatial: Option<SpatialSpec>,
    pub noise: NoiseSpec,
    pub underreporting: UnderReporting,
    pub population: f64,
    pub initial_infected: f64,
    pub initial_recovered: f64,
    /// Block sizes studied for this scenario.
    pub block_sizes: Vec<usize>,
    /// Grid for `a` when the scenario has under-reporting.
    pub a_grid: Vec<f64>,
    /// Model variant the scenario is built to exercise.
    pub variant: ModelVariant,
    pub seed: u64,
    pub start: NaiveDate,
}

const PHI_A: Mat2 = [[0.8, 0.0], [0.2, 0.7]];
const SIGMA_A: Mat2 = [[0.1, 0.0], [0.0, 0.1]];

impl Scenario {
    pub fn preset(id: ScenarioId) -> Self {
        let base = Self {
            id,
            days: 200,
            test_days: 20,
            breaks: vec![100],
            beta: vec![0.10, 0.05],
            gamma: vec![0.04, 0.04],
            log_variance: 0.0,
            spatial: None,
            noise: NoiseSpec::None,
            underreporting: UnderReporting::none(),
            population: 1e8,
            initial_infected: 1e3,
            initial_recovered: 0.0,
            block_sizes: vec![8],
            a_grid: Vec::new(),
            variant: ModelVariant::Model1,
            seed: 2020,
            start: NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date"),
        };
        let spatial = SpatialSpec {
            beta_start: 0.10,
            beta_end: 0.05,
            gamma: 0.04,
            alpha: 1.0,
            population: 1e8,
            initial_infected: 100.0,
        };
        let three_segments = |s: Self| Self {
            days: 250,
            breaks: vec![100, 200],
            beta: vec![0.10, 0.05, 0.10],
            gamma: vec![0.04, 0.06, 0.04],
            log_variance: 0.005,
            ..s
        };
        let coarse_grid = vec![0.1, 0.25, 0.5, 0.75, 1.0];
        match id {
            ScenarioId::A => Self {
                spatial: Some(spatial),
                noise: NoiseSpec::Var {
                    phi: vec![PHI_A],
                    cov: SIGMA_A,
                },
                variant: ModelVariant::Model3,
                ..base
            },
            ScenarioId::B => Self {
                underreporting: UnderReporting::exponential(0.05, 10.0, 250),
                a_grid: (1..=10).map(|i| 0.01 * i as f64).collect(),
                ..three_segments(base)
            },
            ScenarioId::C => Self {
                underreporting: UnderReporting::quadratic(0.5, 200),
                a_grid: coarse_grid,
                ..Self::preset(ScenarioId::A)
            },
            ScenarioId::D => Self {
                log_variance: 0.01,
                block_sizes: vec![4, 8, 12],
                ..three_segments(base)
            },
            ScenarioId::E => Self {
                spatial: Some(spatial),
                noise: NoiseSpec::White {
                    cov: [[1.0, 0.0], [0.0, 1.0]],
                },
                block_sizes: vec![4, 8, 12],
                variant: ModelVariant::Model2,
                ..base
            },
            ScenarioId::F => Self {
                underreporting: UnderReporting::quadratic(0.5, 250),
                a_grid: coarse_grid,
                block_sizes: vec![4, 8, 12],
                ..three_segments(base)
            },
            ScenarioId::G => Self {
                days: 500,
                breaks: vec![200, 300, 400],
                beta: vec![0.10, 0.06, 0.04, 0.05],
                gamma: vec![0.04, 0.04, 0.06, 0.04],
                log_variance: 0.005,
                population: 1e9,
                initial_infected: 10.0,
                ..base
            },
            ScenarioId::H => Self {
                days: 500,
                breaks: vec![150, 250, 350, 400],
                beta: vec![0.10, 0.05, 0.04, 0.06, 0.04],
                gamma: vec![0.04, 0.04, 0.06, 0.04, 0.06],
                log_variance: 0.005,
                population: 1e9,
                initial_infected: 100.0,
                ..base
            },
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("scenario {}: {m}", self.id)));
        if self.beta.len() != self.breaks.len() + 1 || self.gamma.len() != self.beta.len() {
            return bad("need one rate pair per segment");
        }
        if self.beta.iter().chain(&self.gamma).any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("rates must be nonnegative");
        }
        if self.breaks.windows(2).any(|w| w[0] >= w[1]) || self.breaks.iter().any(|&b| b < 2 || b >= self.days) {
            return bad("breaks must increase inside 2..T");
        }
        if self.days < 3 || self.population <= 0.0 || self.initial_infected < 0.0 {
            return bad("needs T >= 3 and a positive population");
        }
        self.underreporting.validate()
    }

    /// Segment rates for row `t`.
    fn rates(&self, t: usize) -> (f64, f64) {
        let j = self.breaks.iter().filter(|&&b| t >= b).count();
        (self.beta[j], self.gamma[j])
    }

    /// Pipeline settings matching the scenario at block size `b`.
    pub fn pipeline_config(&self, variant: ModelVariant, block_size: usize) -> PipelineConfig {
        let underreporting = match self.underreporting.a() {
            Some(_) => self.underreporting.with_a(self.a_grid.first().copied().unwrap_or(1.0)),
            None => self.underreporting,
        };
        PipelineConfig {
            variant,
            detect: DetectConfig {
                block_size,
                ..DetectConfig::default()
            },
            scheme: WeightScheme::DistancePower,
            underreporting,
            a_grid: if self.underreporting.is_none() { Vec::new() } else { self.a_grid.clone() },
            var_p_max: 7,
            ..PipelineConfig::default()
        }
    }
}

/// What the generator used, for scoring fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenario: ScenarioId,
    pub days: usize,
    pub breaks: Vec<usize>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub alpha: Option<f64>,
    pub phi: Option<Vec<Mat2>>,
    pub a: Option<f64>,
    /// Rates actually applied on each row after jitter.
    pub beta_path: Vec<f64>,
    pub gamma_path: Vec<f64>,
    /// Additive errors on each row.
    pub noise_path: Vec<[f64; 2]>,
    pub seed: u64,
    pub replicate: u64,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// `T + test_days` observed days of the target region.
    pub target: EpidemicSeries,
    pub neighbor: Option<EpidemicSeries>,
    /// True infected `I_f(t)` of the target.
    pub true_infected: Vec<f64>,
    pub truth: GroundTruth,
}

pub const TARGET_ID: &str = "target";
pub const NEIGHBOR_ID: &str = "neighbor";
/// Distance placed between the simulated target and neighbour.
pub const NEIGHBOR_MILES: f64 = 100.0;

impl Simulation {
    /// Training window `1..=T` of the target.
    pub fn train(&self) -> Result<EpidemicSeries> {
        self.target.head(self.truth.days)
    }

    /// Catalog with the target and, if present, its neighbour.
    pub fn catalog(&self) -> Result<RegionCatalog> {
        let mut c = RegionCatalog::new();
        c.add_series(self.target.clone());
        if let Some(nb) = &self.neighbor {
            c.add_series(nb.clone());
            c.set_distance(TARGET_ID, NEIGHBOR_ID, NEIGHBOR_MILES)?;
        }
        Ok(c)
    }
}

fn rng_for(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

fn normal2(rng: &mut ChaCha8Rng, cov: &Mat2) -> [f64; 2] {
    let z0: f64 = StandardNormal.sample(rng);
    let z1: f64 = StandardNormal.sample(rng);
    // Cholesky factor of a 2x2 covariance.
    let l00 = cov[0][0].max(0.0).sqrt();
    let l10 = if l00 > 0.0 { cov[1][0] / l00 } else { 0.0 };
    let l11 = (cov[1][1] - l10 * l10).max(0.0).sqrt();
    [l00 * z0, l10 * z0 + l11 * z1]
}

const VAR_BURN_IN: usize = 100;

fn noise_path(noise: &NoiseSpec, rows: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    match noise {
        NoiseSpec::None => vec![[0.0; 2]; rows],
        NoiseSpec::White { cov } => (0..rows).map(|_| normal2(rng, cov)).collect(),
        NoiseSpec::Var { phi, cov } => {
            let mut e: Vec<[f64; 2]> = Vec::with_capacity(rows + VAR_BURN_IN);
            for _ in 0..rows + VAR_BURN_IN {
                let mut next = normal2(rng, cov);
                for (i, p) in phi.iter().enumerate() {
                    if let Some(prev) = e.len().checked_sub(i + 1).map(|k| e[k]) {
                        next[0] += p[0][0] * prev[0] + p[0][1] * prev[1];
                        next[1] += p[1][0] * prev[0] + p[1][1] * prev[1];
                    }
                }
                e.push(next);
            }
            e.split_off(VAR_BURN_IN)
        }
    }
}

/// Deterministic neighbour epidemic and its true increments.
fn neighbor_path(spec: &SpatialSpec, train_days: usize, total: usize) -> (Vec<f64>, Vec<f64>) {
    let (mut i, mut r) = (spec.initial_infected, 0.0);
    let mut is = vec![i];
    let mut rs = vec![r];
    let slope = (spec.beta_start - spec.beta_end) / (train_days - 1) as f64;
    for t in 1..total {
        let beta = spec.beta_start - slope * t as f64;
        let s = (spec.population - i - r).max(0.0);
        let di = beta * s * i / spec.population - spec.gamma * i;
        let dr = spec.gamma * i;
        i = (i + di).max(0.0);
        r += dr;
        is.push(i);
        rs.push(r);
    }
    (is, rs)
}

/// Applies the reporting loss: `I(1) = (1 - u(1)) I_f(1)` and
/// `dI(t) = (1 - u(t+1)) dI_f(t)`. Days where the running total is
/// negative are reported as 0 and counted.
fn observe(i_f: &[f64], u: &UnderReporting) -> Result<(Vec<f64>, usize)> {
    let mut level = i_f[0] * u.reported_fraction(1)?;
    let mut out = vec![level];
    for t in 1..i_f.len() {
        level += (i_f[t] - i_f[t - 1]) * u.reported_fraction(t + 1)?;
        out.push(level);
    }
    let floored = out.iter().filter(|v| **v < 0.0).count();
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok((out, floored))
}

pub fn generate(scenario: &Scenario) -> Result<Simulation> {
    generate_replicate(scenario, 0)
}

/// Forward simulation for one replicate. Each day's `Y_t` updates
/// `(I_f, R)` before the next day's regressors are formed.
pub fn generate_replicate(scenario: &Scenario, replicate: u64) -> Result<Simulation> {
    scenario.validate()?;
    let mut rng = rng_for(scenario.seed, replicate);
    let total = scenario.days + scenario.test_days;
    let rows = total - 1;
    let u = &scenario.underreporting;

    let neighbor = scenario.spatial.map(|s| (s, neighbor_path(&s, scenario.days, total)));
    let noise = noise_path(&scenario.noise, rows, &mut rng);
    let sd = scenario.log_variance.sqrt();

    let n = scenario.population;
    let (mut i_f, mut r) = (scenario.initial_infected, scenario.initial_recovered);
    let mut i_path = vec![i_f];
    let mut r_path = vec![r];
    let mut beta_path = Vec::with_capacity(rows);
    let mut gamma_path = Vec::with_capacity(rows);
    let mut underflow = 0;
    for t in 1..=rows {
        let (b0, g0) = scenario.rates(t);
        let (beta, gamma) = if sd > 0.0 {
            let zb: f64 = StandardNormal.sample(&mut rng);
            let zg: f64 = StandardNormal.sample(&mut rng);
            (b0 * (sd * zb).exp(), g0 * (sd * zg).exp())
        } else {
            (b0, g0)
        };
        beta_path.push(beta);
        gamma_path.push(gamma);
        let mut s = n - i_f - r;
        if s < 0.0 {
            s = 0.0;
            underflow += 1;
        }
        let mut y = [beta * s * i_f / n - gamma * i_f, gamma * i_f];
        if let Some((spec, (ni, nr))) = &neighbor {
            // Z_1 has no preceding neighbour day.
            if t >= 2 {
                y[0] += spec.alpha * n * (ni[t - 1] - ni[t - 2]) / spec.population;
                y[1] += spec.alpha * n * (nr[t - 1] - nr[t - 2]) / spec.population;
            }
        }
        y[0] += noise[t - 1][0];
        y[1] += noise[t - 1][1];
        i_f += y[0];
        r += y[1];
        if i_f < 0.0 {
            i_f = 0.0;
            underflow += 1;
        }
        i_path.push(i_f);
        r_path.push(r);
    }
    let mut warnings = Vec::new();
    if underflow > 0 {
        warnings.push(Warning::StateUnderflow { days: underflow });
    }
    let dates: Vec<NaiveDate> = (0..total)
        .map(|k| scenario.start + chrono::Duration::days(k as i64))
        .collect();
    let (observed, floored) = observe(&i_path, u)?;
    if floored > 0 {
        warnings.push(Warning::ObservedFloor {
            region: TARGET_ID.into(),
            days: floored,
        });
    }
    let target = EpidemicSeries::new(TARGET_ID, dates.clone(), observed, r_path, n)?;
    let neighbor = match neighbor {
        Some((spec, (ni, nr))) => {
            let (observed, floored) = observe(&ni, u)?;
            if floored > 0 {
                warnings.push(Warning::ObservedFloor {
                    region: NEIGHBOR_ID.into(),
                    days: floored,
                });
            }
            Some(EpidemicSeries::new(NEIGHBOR_ID, dates, observed, nr, spec.population)?)
        }
        None => None,
    };
    let truth = GroundTruth {
        scenario: scenario.id,
        days: scenario.days,
        breaks: scenario.breaks.clone(),
        beta: scenario.beta.clone(),
        gamma: scenario.gamma.clone(),
        alpha: scenario.spatial.map(|s| s.alpha),
        phi: match &scenario.noise {
            NoiseSpec::Var { phi, .. } => Some(phi.clone()),
            _ => None,
        },
        a: scenario.underreporting.a(),
        beta_path,
        gamma_path,
        noise_path: noise,
        seed: scenario.seed,
        replicate,
        warnings,
    };
    Ok(Simulation {
        target,
        neighbor,
        true_infected: i_path,
        truth,
    })
}

/// One fitted replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: u64,
    pub points: Vec<usize>,
    /// Whether some point lies in each true break's success interval.
    pub hits: Vec<bool>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Estimated rates at the midpoint of each true segment.
    pub matched: Vec<(f64, f64)>,
    pub alpha: Option<f64>,
    pub alpha_p_value: Option<f64>,
    pub alpha_ci: Option<[f64; 2]>,
    pub a: Option<f64>,
    pub phi: Option<Mat2>,
    pub mrpe_infected: Option<f64>,
    pub mrpe_recovered: Option<f64>,
    pub mrpe_ir: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakSummary {
    pub truth: usize,
    pub relative_truth: f64,
    pub selection_rate: f64,
    /// Mean and standard deviation of `point / T` over successful replicates.
    pub location_mean: f64,
    pub location_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub truth: Option<f64>,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub scenario: ScenarioId,
    pub variant: ModelVariant,
    pub block_size: usize,
    pub n_reps: usize,
    pub failures: Vec<(u64, String)>,
    pub breaks: Vec<BreakSummary>,
    pub params: Vec<ParamSummary>,
    pub records: Vec<ReplicateRecord>,
}

impl ReplicateSummary {
    pub fn param(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplicateConfig {
    pub pipeline: PipelineConfig,
    /// Forecast horizon scored in rolling mode; capped at the generated test days.
    pub horizon: usize,
}

impl ReplicateConfig {
    pub fn for_scenario(scenario: &Scenario, variant: ModelVariant, block_size: usize) -> Self {
        Self {
            pipeline: scenario.pipeline_config(variant, block_size),
            horizon: scenario.test_days,
        }
    }
}

impl Default for ReplicateConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            horizon: 20,
        }
    }
}

fn true_midpoints(scenario: &Scenario) -> Vec<usize> {
    let mut edges = vec![1];
    edges.extend(&scenario.breaks);
    edges.push(scenario.days);
    edges.windows(2).map(|w| (w[0] + w[1]) / 2).collect()
}

/// Generates and fits one replicate.
pub fn run_one(scenario: &Scenario, replicate: u64, config: &ReplicateConfig) -> Result<ReplicateRecord> {
    let sim = generate_replicate(scenario, replicate)?;
    let train = sim.train()?;
    let catalog = sim.catalog()?;
    let model = fit(&train, Some(&catalog), &config.pipeline)?;
    let horizon = config.horizon.min(scenario.test_days);
    let report = forecast(&model, &sim.target, Some(&catalog), horizon, &ForecastOptions::default())?;
    let points = model.change_points.final_points.clone();
    let n = scenario.days;
    let hits = (0..scenario.breaks.len())
        .map(|j| points.iter().any(|&p| in_success_interval(p, &scenario.breaks, j, n)))
        .collect();
    Ok(ReplicateRecord {
        replicate,
        points,
        hits,
        beta: model.segments.iter().map(|s| s.beta).collect(),
        gamma: model.segments.iter().map(|s| s.gamma).collect(),
        matched: true_midpoints(scenario)
            .into_iter()
            .map(|t| {
                let seg = segment_at(&model.segments, t);
                (seg.beta, seg.gamma)
            })
            .collect(),
        alpha: model.alpha.map(|a| a.estimate),
        alpha_p_value: model.alpha.map(|a| a.p_value),
        alpha_ci: model.alpha.map(|a| a.ci),
        a: model.underreporting.a(),
        phi: model.var.as_ref().and_then(|v| v.phi.first().copied()),
        mrpe_infected: report.mrpe_infected,
        mrpe_recovered: report.mrpe_recovered,
        mrpe_ir: report.mrpe_ir,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    (values.iter().sum::<f64>() / values.len() as f64, sample_std(values))
}

fn param(name: String, truth: Option<f64>, values: Vec<f64>) -> ParamSummary {
    let (mean, std) = mean_std(&values);
    ParamSummary {
        name,
        truth,
        mean,
        std,
        count: values.len(),
    }
}

/// Runs `n_reps` replicates in parallel and summarizes them. Failed
/// replicates are listed, count as misses in selection rates and are
/// excluded from every other statistic.
pub fn run_replicates(scenario: &Scenario, n_reps: usize, config: &ReplicateConfig) -> Result<ReplicateSummary> {
    if n_reps == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    scenario.validate()?;
    let outcomes: Vec<(u64, Result<ReplicateRecord>)> = (0..n_reps as u64)
        .into_par_iter()
        .map(|r| (r, run_one(scenario, r, config)))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, out) in outcomes {
        match out {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    Ok(summarize(scenario, config, n_reps, records, failures))
}

fn summarize(
    scenario: &Scenario,
    config: &ReplicateConfig,
    n_reps: usize,
    records: Vec<ReplicateRecord>,
    failures: Vec<(u64, String)>,
) -> ReplicateSummary {
    let n = scenario.days;
    // A failed replicate counts as a miss.
    let total = n_reps as f64;
    let breaks = scenario
        .breaks
        .iter()
        .enumerate()
        .map(|(j, &b)| {
            let locs: Vec<f64> = records
                .iter()
                .filter_map(|r| {
                    r.points
                        .iter()
                        .find(|&&p| in_success_interval(p, &scenario.breaks, j, n))
                        .map(|&p| p as f64 / n as f64)
                })
                .collect();
            let (location_mean, location_std) = mean_std(&locs);
            BreakSummary {
                truth: b,
                relative_truth: b as f64 / n as f64,
                selection_rate: locs.len() as f64 / total,
                location_mean,
                location_std,
            }
        })
        .collect();
    // Rates are read at each true segment's midpoint, so spurious extra
    // points away from the midpoint do not drop a replicate.
    let mut params = Vec::new();
    for j in 0..scenario.beta.len() {
        params.push(param(format!("beta_{}", j + 1), Some(scenario.beta[j]), records.iter().map(|r| r.matched[j].0).collect()));
    }
    for j in 0..scenario.gamma.len() {
        params.push(param(format!("gamma_{}", j + 1), Some(scenario.gamma[j]), records.iter().map(|r| r.matched[j].1).collect()));
    }
    let alpha: Vec<f64> = records.iter().filter_map(|r| r.alpha).collect();
    if !alpha.is_empty() {
        params.push(param("alpha".into(), scenario.spatial.map(|s| s.alpha), alpha));
    }
    let a: Vec<f64> = records.iter().filter_map(|r| r.a).collect();
    if !a.is_empty() {
        params.push(param("a".into(), scenario.underreporting.a(), a));
    }
    let truth_phi = match &scenario.noise {
        NoiseSpec::Var { phi, .. } => phi.first().copied(),
        _ => None,
    };
    let phis: Vec<Mat2> = records.iter().filter_map(|r| r.phi).collect();
    if !phis.is_empty() {
        for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            params.push(param(
                format!("phi_{}{}", r + 1, c + 1),
                truth_phi.map(|p| p[r][c]),
                phis.iter().map(|p| p[r][c]).collect(),
            ));
        }
    }
    for (name, get) in [
        ("mrpe_infected", (|r: &ReplicateRecord| r.mrpe_infected) as fn(&ReplicateRecord) -> Option<f64>),
        ("mrpe_recovered", |r| r.mrpe_recovered),
        ("mrpe_ir", |r| r.mrpe_ir),
    ] {
        let v: Vec<f64> = records.iter().filter_map(get).collect();
        if !v.is_empty() {
            params.push(param(name.into(), None, v));
        }
    }
    ReplicateSummary {
        scenario: scenario.id,
        variant: config.pipeline.variant,
        block_size: config.pipeline.detect.block_size,
        n_reps,
        failures,
        breaks,
        params,
        records,
    }
}

/// Table-style CSV: one row per break, then one row per parameter.
pub fn summary_csv(summary: &ReplicateSummary) -> String {
    let mut out = String::from("kind,name,truth,mean,std,rate_or_count\n");
    for (j, b) in summary.breaks.iter().enumerate() {
        out.push_str(&format!(
            "break,t{},{},{},{},{}\n",
            j + 1,
            b.relative_truth,
            b.location_mean,
            b.location_std,
            b.selection_rate
        ));
    }
    for p in &summary.params {
        let truth = p.truth.map(|t| t.to_string()).unwrap_or_default();
        out.push_str(&format!("param,{},{},{},{},{}\n", p.name, truth, p.mean, p.std, p.count));
    }
    out
}
