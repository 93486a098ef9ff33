mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sirbreak::detect::DetectConfig;
use sirbreak::ingest::{self, StudyWindow};
use sirbreak::model::UnderReporting;
use sirbreak::pipeline::{
    self, default_a_grid, AlphaInference, FittedModel, ForecastMode, ForecastOptions, ForecastReport, ModelVariant,
    PipelineConfig,
};
use sirbreak::simgen::{self, GroundTruth, ReplicateConfig, ReplicateSummary, Scenario, ScenarioId};
use sirbreak::spatial::{RegionCatalog, WeightOptions, WeightScheme};
use sirbreak::varfit::residual_acf;
use sirbreak::Warning;

use config::FileConfig;

const SCHEMA_VERSION: u32 = 1;
const ACF_LAGS: usize = 20;

#[derive(Parser)]
#[command(name = "sirbreak", version, about = "Change points and forecasts for regional SIR models")]
struct Cli {
    /// TOML or JSON file with defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for replicate runs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one scenario replicate as a processed data directory.
    Simulate(SimulateArgs),
    /// Fit a model to one region.
    Fit(FitArgs),
    /// Forecast from a fitted model and score against observations.
    Forecast(ForecastArgs),
    /// Run a replication study on a scenario.
    Replicate(ReplicateArgs),
    /// Load a data directory and report what would be fitted.
    IngestCheck(IngestArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: ScenarioId,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Default)]
struct TuningArgs {
    /// 1, 2 or 3.
    #[arg(long)]
    model: Option<ModelVariant>,
    /// equal, distance-power, similarity-top5 or similarity-all.
    #[arg(long)]
    weights: Option<WeightScheme>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    grid_size: Option<usize>,
    /// Fixed penalty; skips cross-validation.
    #[arg(long)]
    lambda: Option<f64>,
    /// none, quadratic or exponential.
    #[arg(long)]
    underreporting: Option<String>,
    /// Comma-separated values of `a`.
    #[arg(long, value_delimiter = ',')]
    a_grid: Option<Vec<f64>>,
    /// Known `b` of the exponential family.
    #[arg(long)]
    reporting_b: Option<f64>,
    /// Day after which reporting is complete.
    #[arg(long)]
    reporting_cutoff: Option<usize>,
    #[arg(long)]
    distance_threshold: Option<f64>,
    #[arg(long)]
    max_neighbors: Option<usize>,
    #[arg(long)]
    var_p_max: Option<usize>,
}

#[derive(Args)]
struct DataArgs {
    /// Raw (cases.csv) or processed (series.csv) data directory.
    #[arg(long)]
    data: PathBuf,
    /// First study day for raw data.
    #[arg(long)]
    start: Option<NaiveDate>,
    /// Last study day for raw data.
    #[arg(long)]
    end: Option<NaiveDate>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    region: String,
    /// Fit on the first N days only.
    #[arg(long)]
    train_days: Option<usize>,
    #[command(flatten)]
    tuning: TuningArgs,
    #[arg(long)]
    out: PathBuf,
    /// Directory for change point, residual, ACF and fitted-series CSVs.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args)]
struct ForecastArgs {
    /// Output of `fit`.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    horizon: Option<usize>,
    /// rolling or free.
    #[arg(long)]
    mode: Option<ForecastMode>,
    /// 0-based segment whose rates drive the forecast.
    #[arg(long)]
    segment: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Observed vs predicted per day.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct ReplicateArgs {
    #[arg(long)]
    scenario: ScenarioId,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    model: Option<ModelVariant>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    grid_size: Option<usize>,
    /// Summary table.
    #[arg(long)]
    out: PathBuf,
    /// Full summary with per-replicate records.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Write the assembled catalog in the processed layout.
    #[arg(long)]
    export: Option<PathBuf>,
    /// Report file; stdout if unset.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    schema_version: u32,
    scenario: Scenario,
    truth: GroundTruth,
    true_infected: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ChangePointDate {
    day: usize,
    date: NaiveDate,
}

#[derive(Serialize, Deserialize)]
struct FitFile {
    schema_version: u32,
    change_points: Vec<ChangePointDate>,
    alpha: Option<AlphaInference>,
    model: FittedModel,
}

#[derive(Serialize, Deserialize)]
struct ForecastFile {
    schema_version: u32,
    region_id: String,
    report: ForecastReport,
}

#[derive(Serialize)]
struct ReplicateFile<'a> {
    schema_version: u32,
    scenario: &'a Scenario,
    config: &'a ReplicateConfig,
    summary: &'a ReplicateSummary,
}

#[derive(Serialize)]
struct RegionReport {
    region_id: String,
    population: f64,
    days: usize,
    first_date: NaiveDate,
    last_date: NaiveDate,
    has_neighbors: bool,
}

#[derive(Serialize)]
struct IngestReport {
    schema_version: u32,
    regions: Vec<RegionReport>,
    warnings: Vec<Warning>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(jobs) = cli.jobs.or(file.jobs) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("setting up worker threads")?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a, &file),
        Command::Fit(a) => fit(a, &file),
        Command::Forecast(a) => forecast(a, &file),
        Command::Replicate(a) => replicate(a, &file),
        Command::IngestCheck(a) => ingest_check(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Writes pretty JSON and reads it back to check it parses.
fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    let back = std::fs::read_to_string(path)?;
    serde_json::from_str::<serde_json::Value>(&back).with_context(|| format!("validating {}", path.display()))?;
    Ok(())
}

fn load_data(args: &DataArgs) -> Result<(RegionCatalog, Vec<Warning>)> {
    if args.data.join(ingest::CASES_FILE).exists() {
        let mut window = StudyWindow::default();
        if let Some(s) = args.start {
            window.start = s;
        }
        window.end = args.end;
        let out = ingest::load_raw_dir(&args.data, &window)?;
        Ok((out.catalog, out.warnings))
    } else {
        let catalog = ingest::load_catalog_dir(&args.data)
            .with_context(|| format!("loading {}", args.data.display()))?;
        let warnings = catalog
            .isolated()
            .into_iter()
            .map(|region| Warning::Isolated { region })
            .collect();
        Ok((catalog, warnings))
    }
}

fn simulate(a: SimulateArgs, file: &FileConfig) -> Result<()> {
    let mut scenario = Scenario::preset(a.scenario);
    if let Some(seed) = a.seed.or(file.seed) {
        scenario = scenario.with_seed(seed);
    }
    let sim = simgen::generate_replicate(&scenario, a.replicate)?;
    ingest::save_catalog_dir(&sim.catalog()?, &a.out)?;
    write_json(
        &a.out.join("truth.json"),
        &TruthFile {
            schema_version: SCHEMA_VERSION,
            scenario,
            truth: sim.truth.clone(),
            true_infected: sim.true_infected.clone(),
        },
    )
}

fn reporting(t: &TuningArgs, file: &FileConfig, horizon: usize) -> Result<(UnderReporting, Vec<f64>)> {
    let family = t.underreporting.clone().or_else(|| file.underreporting.clone());
    let grid = t.a_grid.clone().or_else(|| file.a_grid.clone()).unwrap_or_else(default_a_grid);
    let first = *grid.first().context("a-grid is empty")?;
    let u = match family.as_deref().unwrap_or("none") {
        "none" => return Ok((UnderReporting::none(), Vec::new())),
        "quadratic" => UnderReporting::quadratic(first, horizon),
        "exponential" => {
            let b = t
                .reporting_b
                .or(file.reporting_b)
                .context("exponential under-reporting needs --reporting-b")?;
            UnderReporting::exponential(first, b, horizon)
        }
        other => bail!("unknown under-reporting family {other}"),
    };
    Ok((u.with_cutoff(t.reporting_cutoff.or(file.reporting_cutoff)), grid))
}

fn pipeline_config(t: &TuningArgs, file: &FileConfig, train_len: usize) -> Result<PipelineConfig> {
    let base = PipelineConfig::default();
    let detect = DetectConfig {
        block_size: t.block_size.or(file.block_size).unwrap_or(base.detect.block_size),
        grid_size: t.grid_size.or(file.grid_size).unwrap_or(base.detect.grid_size),
        lambda: t.lambda.or(file.lambda),
        ..base.detect.clone()
    };
    let defaults = WeightOptions::default();
    let weights = WeightOptions {
        distance_threshold: t
            .distance_threshold
            .or(file.distance_threshold)
            .unwrap_or(defaults.distance_threshold),
        max_neighbors: t.max_neighbors.or(file.max_neighbors).unwrap_or(defaults.max_neighbors),
        ..defaults
    };
    let (underreporting, a_grid) = reporting(t, file, train_len)?;
    Ok(PipelineConfig {
        variant: t.model.or(file.model).unwrap_or(base.variant),
        detect,
        scheme: t.weights.or(file.weights).unwrap_or(base.scheme),
        weights,
        underreporting,
        a_grid,
        var_p_max: t.var_p_max.or(file.var_p_max).unwrap_or(base.var_p_max),
        ..base
    })
}

fn fit(a: FitArgs, file: &FileConfig) -> Result<()> {
    let (catalog, _) = load_data(&a.data)?;
    let full = catalog.get(&a.region)?;
    let series = match a.train_days.or(file.train_days) {
        Some(n) if n > full.len() => bail!("--train-days {n} exceeds the {} days available", full.len()),
        Some(n) => full.head(n)?,
        None => full.clone(),
    };
    let config = pipeline_config(&a.tuning, file, series.len())?;
    let model = pipeline::fit(&series, Some(&catalog), &config)?;
    let change_points = model
        .change_points
        .final_points
        .iter()
        .zip(&model.change_dates)
        .map(|(&day, &date)| ChangePointDate { day, date })
        .collect();
    if let Some(dir) = &a.diagnostics {
        write_diagnostics(dir, &model, &series)?;
    }
    write_json(
        &a.out,
        &FitFile {
            schema_version: SCHEMA_VERSION,
            change_points,
            alpha: pipeline::alpha_inference(&model),
            model,
        },
    )
}

fn write_diagnostics(dir: &Path, model: &FittedModel, series: &sirbreak::EpidemicSeries) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = create(&dir.join("change_points.csv"))?;
    writeln!(w, "day,date")?;
    for (day, date) in model.change_points.final_points.iter().zip(&model.change_dates) {
        writeln!(w, "{day},{date}")?;
    }
    w.flush()?;

    let mut w = create(&dir.join("residuals.csv"))?;
    writeln!(w, "day,date,residual_infected,residual_recovered")?;
    for (k, e) in model.residuals.iter().enumerate() {
        writeln!(w, "{},{},{},{}", k + 1, series.dates[k], e[0], e[1])?;
    }
    w.flush()?;

    // Model 3 is judged on its VAR innovations, the others on raw residuals.
    let resid = if model.var.is_some() {
        model.innovations()
    } else {
        model.residuals.clone()
    };
    let band = 2.0 / (resid.len() as f64).sqrt();
    let mut w = create(&dir.join("acf.csv"))?;
    writeln!(w, "lag,acf_infected,acf_recovered,band")?;
    for (h, r) in residual_acf(&resid, ACF_LAGS).iter().enumerate() {
        writeln!(w, "{h},{},{},{band}", r[0], r[1])?;
    }
    w.flush()?;

    let fitted = pipeline::fitted_series(model, series)?;
    let mut w = create(&dir.join("fitted.csv"))?;
    writeln!(w, "date,observed_infected,fitted_infected,observed_recovered,fitted_recovered")?;
    for k in 0..fitted.infected.len() {
        writeln!(
            w,
            "{},{},{},{},{}",
            series.dates[k], series.infected[k], fitted.infected[k], series.recovered[k], fitted.recovered[k]
        )?;
    }
    w.flush()?;
    Ok(())
}

fn forecast(a: ForecastArgs, file: &FileConfig) -> Result<()> {
    let text = std::fs::read_to_string(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let fitted: FitFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.model.display()))?;
    if fitted.schema_version != SCHEMA_VERSION {
        bail!("model file has schema version {}, expected {SCHEMA_VERSION}", fitted.schema_version);
    }
    let (catalog, _) = load_data(&a.data)?;
    let model = fitted.model;
    let series = catalog.get(&model.region_id)?;
    let opts = ForecastOptions {
        mode: a.mode.or(file.mode).unwrap_or_default(),
        segment: a.segment,
    };
    let horizon = a.horizon.or(file.horizon).unwrap_or(14);
    let report = pipeline::forecast(&model, series, Some(&catalog), horizon, &opts)?;
    if let Some(path) = &a.plot {
        let mut w = create(path)?;
        writeln!(w, "day,date,observed_infected,predicted_infected,observed_recovered,predicted_recovered")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for d in &report.days {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                d.day,
                d.date,
                opt(d.observed_infected),
                d.predicted_infected,
                opt(d.observed_recovered),
                d.predicted_recovered
            )?;
        }
        w.flush()?;
    }
    write_json(
        &a.out,
        &ForecastFile {
            schema_version: SCHEMA_VERSION,
            region_id: model.region_id.clone(),
            report,
        },
    )
}

fn replicate(a: ReplicateArgs, file: &FileConfig) -> Result<()> {
    let mut scenario = Scenario::preset(a.scenario);
    if let Some(seed) = a.seed.or(file.seed) {
        scenario = scenario.with_seed(seed);
    }
    let variant = a.model.or(file.model).unwrap_or(scenario.variant);
    let block = a
        .block_size
        .or(file.block_size)
        .unwrap_or(scenario.block_sizes[0]);
    let mut config = ReplicateConfig::for_scenario(&scenario, variant, block);
    if let Some(g) = a.grid_size.or(file.grid_size) {
        config.pipeline.detect.grid_size = g;
    }
    let reps = a.reps.or(file.reps).unwrap_or(20);
    let summary = simgen::run_replicates(&scenario, reps, &config)?;
    let mut w = create(&a.out)?;
    w.write_all(simgen::summary_csv(&summary).as_bytes())?;
    w.flush()?;
    if let Some(path) = &a.json {
        write_json(
            path,
            &ReplicateFile {
                schema_version: SCHEMA_VERSION,
                scenario: &scenario,
                config: &config,
                summary: &summary,
            },
        )?;
    }
    Ok(())
}

fn ingest_check(a: IngestArgs) -> Result<()> {
    let (catalog, warnings) = load_data(&a.data)?;
    let connected = catalog.connected();
    let regions = catalog
        .series
        .values()
        .map(|s| RegionReport {
            region_id: s.region_id.clone(),
            population: s.population,
            days: s.len(),
            first_date: s.dates[0],
            last_date: *s.dates.last().expect("series has days"),
            has_neighbors: connected.contains(s.region_id.as_str()),
        })
        .collect();
    if let Some(dir) = &a.export {
        ingest::save_catalog_dir(&catalog, dir)?;
    }
    let report = IngestReport {
        schema_version: SCHEMA_VERSION,
        regions,
        warnings,
    };
    match &a.out {
        Some(path) => write_json(path, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}
