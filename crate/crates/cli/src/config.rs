//! Optional TOML or JSON file mirroring the command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use sirbreak::pipeline::{ForecastMode, ModelVariant};
use sirbreak::spatial::WeightScheme;

/// Every field is optional; a flag given on the command line wins.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<ModelVariant>,
    pub weights: Option<WeightScheme>,
    pub block_size: Option<usize>,
    pub grid_size: Option<usize>,
    pub lambda: Option<f64>,
    pub underreporting: Option<String>,
    pub a_grid: Option<Vec<f64>>,
    pub reporting_b: Option<f64>,
    pub reporting_cutoff: Option<usize>,
    pub distance_threshold: Option<f64>,
    pub max_neighbors: Option<usize>,
    pub var_p_max: Option<usize>,
    pub train_days: Option<usize>,
    pub horizon: Option<usize>,
    pub mode: Option<ForecastMode>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).with_context(|| format!("parsing {}", path.display())),
            Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())),
            _ => bail!("config file must end in .toml or .json: {}", path.display()),
        }
    }
}
