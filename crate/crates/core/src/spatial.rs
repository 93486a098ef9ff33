//! Neighbour selection, spatial weights and the spatial covariate `Z_t`.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::diag::Warning;
use crate::error::{Error, Result};
use crate::model::{EpidemicSeries, UnderReporting};

/// Regions, populations, pairwise distances and case series.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionCatalog {
    pub populations: BTreeMap<String, f64>,
    /// Symmetric distances in miles, stored once per ordered pair `(a, b)` with `a < b`.
    pub distances: BTreeMap<String, BTreeMap<String, f64>>,
    pub series: BTreeMap<String, EpidemicSeries>,
}

impl RegionCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_series(&mut self, series: EpidemicSeries) {
        self.populations
            .insert(series.region_id.clone(), series.population);
        self.series.insert(series.region_id.clone(), series);
    }

    pub fn set_distance(&mut self, a: &str, b: &str, miles: f64) -> Result<()> {
        if !(miles.is_finite() && miles >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "distance {a}-{b} must be nonnegative, got {miles}"
            )));
        }
        if a == b {
            return Ok(());
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.distances
            .entry(lo.to_string())
            .or_default()
            .insert(hi.to_string(), miles);
        Ok(())
    }

    pub fn distance(&self, a: &str, b: &str) -> Option<f64> {
        if a == b {
            return Some(0.0);
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.distances.get(lo).and_then(|m| m.get(hi)).copied()
    }

    /// Regions that appear in at least one distance row.
    pub fn connected(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        for (a, m) in &self.distances {
            out.insert(a.as_str());
            out.extend(m.keys().map(String::as_str));
        }
        out
    }

    /// Regions with series but no distance rows; they never serve as neighbours.
    pub fn isolated(&self) -> Vec<String> {
        let conn = self.connected();
        self.series
            .keys()
            .filter(|k| !conn.contains(k.as_str()))
            .cloned()
            .collect()
    }

    pub fn get(&self, id: &str) -> Result<&EpidemicSeries> {
        self.series
            .get(id)
            .ok_or_else(|| Error::UnknownRegion(id.to_string()))
    }

    /// Candidate neighbours of `target`: other regions with series that are
    /// not isolated.
    fn pool(&self, target: &str) -> Vec<&str> {
        let conn = self.connected();
        self.series
            .keys()
            .map(String::as_str)
            .filter(|k| *k != target && conn.contains(k))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    Equal,
    DistancePower,
    SimilarityTop5,
    SimilarityAll,
}

impl std::str::FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" => Ok(Self::Equal),
            "distance-power" | "distance" => Ok(Self::DistancePower),
            "similarity-top5" => Ok(Self::SimilarityTop5),
            "similarity-all" => Ok(Self::SimilarityAll),
            _ => Err(Error::InvalidArgument(format!("unknown weight scheme {s}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightOptions {
    /// Neighbours must lie within this many miles (distance schemes).
    pub distance_threshold: f64,
    pub max_neighbors: usize,
    /// Days of the target series used for similarity scores; `None` uses all.
    pub similarity_days: Option<usize>,
}

impl Default for WeightOptions {
    fn default() -> Self {
        Self {
            distance_threshold: 500.0,
            max_neighbors: 5,
            similarity_days: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialWeights {
    pub scheme: WeightScheme,
    pub neighbors: Vec<String>,
    pub omega: Vec<f64>,
    pub warnings: Vec<Warning>,
}

/// Root sum of squared differences of per-capita true new infections and
/// new recoveries.
pub fn similarity_score(target: &EpidemicSeries, other: &EpidemicSeries, u: &UnderReporting) -> Result<f64> {
    if target.len() != other.len() {
        return Err(Error::LengthMismatch {
            left: target.len(),
            right: other.len(),
        });
    }
    let (n0, n1) = (target.population, other.population);
    let mut acc = 0.0;
    for t in 1..target.len() {
        let keep = u.reported_fraction(t + 1)?;
        let di = target.delta_infected(t) / keep / n0 - other.delta_infected(t) / keep / n1;
        let dr = target.delta_recovered(t) / n0 - other.delta_recovered(t) / n1;
        acc += di * di + dr * dr;
    }
    Ok(acc.sqrt())
}

/// The neighbour's days matching `target`'s dates.
fn aligned(target: &EpidemicSeries, other: &EpidemicSeries) -> Result<EpidemicSeries> {
    let first = target.dates[0];
    let offset = other
        .dates
        .iter()
        .position(|d| *d == first)
        .ok_or_else(|| Error::AlignmentError(other.region_id.clone()))?;
    if offset + target.len() > other.len() {
        return Err(Error::LengthMismatch {
            left: target.len(),
            right: other.len() - offset,
        });
    }
    other.window(offset + 1, target.len())
}

pub fn build_weights(
    catalog: &RegionCatalog,
    target_id: &str,
    scheme: WeightScheme,
    u: &UnderReporting,
    opts: &WeightOptions,
) -> Result<SpatialWeights> {
    let target = catalog.get(target_id)?;
    let mut warnings = Vec::new();
    // (id, score) where weights are proportional to 1/score.
    let chosen: Vec<(String, f64)> = match scheme {
        WeightScheme::Equal | WeightScheme::DistancePower => {
            let mut near: Vec<(String, f64)> = catalog
                .pool(target_id)
                .into_iter()
                .filter_map(|id| {
                    catalog
                        .distance(target_id, id)
                        .filter(|d| *d <= opts.distance_threshold)
                        .map(|d| (id.to_string(), d))
                })
                .collect();
            if scheme == WeightScheme::DistancePower {
                near.retain(|(id, d)| {
                    if *d == 0.0 {
                        warnings.push(Warning::ZeroDenominator { region: id.clone() });
                    }
                    *d > 0.0
                });
            }
            near.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
            near.truncate(opts.max_neighbors);
            if scheme == WeightScheme::Equal {
                near.into_iter().map(|(id, _)| (id, 1.0)).collect()
            } else {
                near
            }
        }
        WeightScheme::SimilarityTop5 | WeightScheme::SimilarityAll => {
            let days = opts.similarity_days.unwrap_or(target.len()).min(target.len());
            let tw = target.head(days)?;
            let mut scored = Vec::new();
            for id in catalog.pool(target_id) {
                let other = aligned(&tw, catalog.get(id)?)?;
                let s = similarity_score(&tw, &other, u)?;
                if s == 0.0 {
                    warnings.push(Warning::ZeroDenominator { region: id.to_string() });
                    continue;
                }
                scored.push((id.to_string(), s));
            }
            scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
            if scheme == WeightScheme::SimilarityTop5 {
                scored.truncate(opts.max_neighbors);
            }
            scored
        }
    };
    if chosen.is_empty() {
        return Err(Error::NoNeighbors(target_id.to_string()));
    }
    let total: f64 = chosen.iter().map(|(_, s)| 1.0 / s).sum();
    Ok(SpatialWeights {
        scheme,
        neighbors: chosen.iter().map(|(id, _)| id.clone()).collect(),
        omega: chosen.iter().map(|(_, s)| (1.0 / s) / total).collect(),
        warnings,
    })
}

/// Per-capita neighbour increments, one 2-vector per target day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialCovariate {
    /// `z[t-1] = Z_t` for day `t` of the target calendar.
    pub z: Vec<[f64; 2]>,
    pub warnings: Vec<Warning>,
}

/// `Z_t = sum_j w_j (dI^j(t-1) / (N^j (1 - u(t))), dR^j(t-1) / N^j)` for
/// `days` consecutive days from `start`, where `dI^j(t-1)` is the
/// neighbour's increment into day `t`.
pub fn spatial_covariate(
    weights: &SpatialWeights,
    catalog: &RegionCatalog,
    start: NaiveDate,
    days: usize,
    u: &UnderReporting,
) -> Result<SpatialCovariate> {
    let mut z = vec![[0.0; 2]; days];
    let mut warnings = Vec::new();
    let mut order: Vec<usize> = (0..weights.neighbors.len()).collect();
    order.sort_by(|&a, &b| weights.neighbors[a].cmp(&weights.neighbors[b]));
    let mut start_missing = false;
    for k in order {
        let nb = catalog.get(&weights.neighbors[k])?;
        let w = weights.omega[k];
        let first = nb.dates[0];
        let lookup = |d: NaiveDate| -> Option<usize> {
            let off = (d - first).num_days();
            (off >= 0 && (off as usize) < nb.len()).then_some(off as usize)
        };
        let mut gaps = 0;
        for (idx, zt) in z.iter_mut().enumerate() {
            let date = start + Duration::days(idx as i64);
            match (lookup(date - Duration::days(1)), lookup(date)) {
                (Some(p), Some(c)) => {
                    let keep = u.reported_fraction(idx + 1)?;
                    zt[0] += w * (nb.infected[c] - nb.infected[p]) / (nb.population * keep);
                    zt[1] += w * (nb.recovered[c] - nb.recovered[p]) / nb.population;
                }
                _ if idx == 0 => start_missing = true,
                _ => gaps += 1,
            }
        }
        if gaps == days.saturating_sub(1) && days > 1 {
            return Err(Error::AlignmentError(nb.region_id.clone()));
        }
        if gaps > 0 {
            warnings.push(Warning::SpatialGap {
                region: nb.region_id.clone(),
                days: gaps,
            });
        }
    }
    if start_missing {
        if let Some(z1) = z.first_mut() {
            *z1 = [0.0; 2];
        }
        warnings.push(Warning::SpatialStartZero);
    }
    Ok(SpatialCovariate { z, warnings })
}
