use std::path::Path;
use std::process::{Command, Output};

fn sirbreak(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sirbreak"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = sirbreak(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["simulate", "--scenario", "B", "--seed", "7", "--out", p(&a)]);
    ok(&["simulate", "--scenario", "b", "--seed", "7", "--out", p(&b)]);
    for f in ["series.csv", "population.csv", "truth.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(json(&a.join("truth.json"))["schema_version"], 1);
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let out = sirbreak(&["simulate", "--scenario", "Q", "--out", "/nonexistent"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown scenario"));
}

#[test]
fn missing_data_dir_is_a_runtime_error() {
    let out = sirbreak(&["ingest-check", "--data", "/nonexistent/sirbreak"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_fit_forecast_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model.json");
    let diag = dir.path().join("diag");
    let report = dir.path().join("forecast.json");
    let plot = dir.path().join("plot.csv");
    ok(&["simulate", "--scenario", "A", "--out", p(&data)]);
    ok(&[
        "fit", "--data", p(&data), "--region", "target", "--train-days", "200", "--out", p(&model),
        "--diagnostics", p(&diag),
    ]);
    let fitted = json(&model);
    assert_eq!(fitted["schema_version"], 1);
    let days: Vec<u64> = fitted["change_points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["day"].as_u64().unwrap())
        .collect();
    // Scenario A breaks at day 100.
    assert!(days.iter().any(|&d| d.abs_diff(100) <= 2), "{days:?}");
    for f in ["change_points.csv", "residuals.csv", "acf.csv", "fitted.csv"] {
        assert!(diag.join(f).exists(), "{f}");
    }
    let acf = std::fs::read_to_string(diag.join("acf.csv")).unwrap();
    assert_eq!(acf.lines().count(), 22);

    ok(&[
        "forecast", "--model", p(&model), "--data", p(&data), "--horizon", "20", "--out", p(&report), "--plot",
        p(&plot),
    ]);
    let fc = json(&report);
    assert_eq!(fc["report"]["days"].as_array().unwrap().len(), 20);
    assert!(fc["report"]["mrpe_infected"].as_f64().unwrap() < 0.01);
    assert_eq!(std::fs::read_to_string(&plot).unwrap().lines().count(), 21);
}

#[test]
fn zero_horizon_forecast_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model.json");
    let report = dir.path().join("forecast.json");
    ok(&["simulate", "--scenario", "A", "--out", p(&data)]);
    ok(&["fit", "--data", p(&data), "--region", "target", "--train-days", "200", "--out", p(&model)]);
    ok(&["forecast", "--model", p(&model), "--data", p(&data), "--horizon", "0", "--out", p(&report)]);
    assert!(json(&report)["report"]["days"].as_array().unwrap().is_empty());
}

#[test]
fn fit_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["simulate", "--scenario", "B", "--out", p(&data)]);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "fit", "--data", p(&data), "--region", "target", "--train-days", "250", "--model", "1",
            "--underreporting", "exponential", "--reporting-b", "10", "--a-grid", "0.03,0.05,0.07", "--out", p(&out),
        ]);
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("one.json"), run("two.json"));
}

#[test]
fn spatial_fit_reports_alpha_interval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model.json");
    ok(&["simulate", "--scenario", "E", "--out", p(&data)]);
    ok(&[
        "fit", "--data", p(&data), "--region", "target", "--train-days", "200", "--model", "2", "--weights",
        "similarity-top5", "--out", p(&model),
    ]);
    let alpha = &json(&model)["alpha"];
    let ci = alpha["ci"].as_array().unwrap();
    let (lo, hi) = (ci[0].as_f64().unwrap(), ci[1].as_f64().unwrap());
    let est = alpha["estimate"].as_f64().unwrap();
    assert!(lo <= est && est <= hi);
    assert!((est - 1.0).abs() < 0.1, "{est}");
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "model = \"model1\"\nblock_size = 9\ntrain_days = 200\n").unwrap();
    ok(&["simulate", "--scenario", "A", "--out", p(&data)]);
    let from_file = dir.path().join("a.json");
    ok(&["--config", p(&cfg), "fit", "--data", p(&data), "--region", "target", "--out", p(&from_file)]);
    let m = json(&from_file);
    assert_eq!(m["model"]["variant"], "model1");
    assert_eq!(m["model"]["train_len"], 200);

    let overridden = dir.path().join("b.json");
    ok(&[
        "--config", p(&cfg), "fit", "--data", p(&data), "--region", "target", "--model", "3", "--out",
        p(&overridden),
    ]);
    assert_eq!(json(&overridden)["model"]["variant"], "model3");
}

#[test]
fn bad_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "blocksize = 9\n").unwrap();
    let out = sirbreak(&["--config", p(&cfg), "ingest-check", "--data", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn replicate_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("summary.csv");
    let full = dir.path().join("summary.json");
    ok(&["--jobs", "2", "replicate", "--scenario", "D", "--reps", "2", "--out", p(&csv), "--json", p(&full)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("kind,name,truth,mean,std,rate_or_count"));
    assert_eq!(json(&full)["summary"]["n_reps"], 2);
}

#[test]
fn ingest_check_exports_processed_layout() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let export = dir.path().join("export");
    let report = dir.path().join("report.json");
    ok(&["simulate", "--scenario", "A", "--out", p(&data)]);
    ok(&["ingest-check", "--data", p(&data), "--export", p(&export), "--out", p(&report)]);
    let r = json(&report);
    assert_eq!(r["regions"].as_array().unwrap().len(), 2);
    assert_eq!(
        std::fs::read(data.join("series.csv")).unwrap(),
        std::fs::read(export.join("series.csv")).unwrap()
    );
}
