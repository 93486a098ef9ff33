//! CSV input and output for case data, populations and distances.
//!
//! Raw layout (one directory):
//! - `cases.csv`: `date,region_id,cases,deaths` with cumulative counts
//! - `national.csv`: `date,recovered,deaths` with cumulative national counts
//! - `population.csv`: `region_id,population`
//! - `distances.csv`: `region_id_a,region_id_b,miles`
//!
//! Processed layout replaces the first two files with `series.csv`:
//! `date,region_id,infected,recovered`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::diag::Warning;
use crate::error::{Error, Result};
use crate::model::EpidemicSeries;
use crate::spatial::RegionCatalog;

pub const CASES_FILE: &str = "cases.csv";
pub const NATIONAL_FILE: &str = "national.csv";
pub const POPULATION_FILE: &str = "population.csv";
pub const DISTANCES_FILE: &str = "distances.csv";
pub const SERIES_FILE: &str = "series.csv";

/// Cumulative cases and deaths for one region on consecutive days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRegion {
    pub region_id: String,
    pub dates: Vec<NaiveDate>,
    pub cases: Vec<f64>,
    pub deaths: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseTable {
    pub regions: BTreeMap<String, RawRegion>,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Deserialize)]
struct CaseRow {
    date: NaiveDate,
    region_id: String,
    cases: f64,
    deaths: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SeriesRow {
    date: NaiveDate,
    region_id: String,
    infected: f64,
    recovered: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct NationalRow {
    date: NaiveDate,
    recovered: f64,
    deaths: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PopulationRow {
    region_id: String,
    population: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DistanceRow {
    region_id_a: String,
    region_id_b: String,
    miles: f64,
}

fn parse_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::Deserialize { err, .. } => Error::Parse {
            line,
            message: err.to_string(),
        },
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Deserializes every row, tagging each with its 1-based file line.
fn rows<T: serde::de::DeserializeOwned, R: Read>(reader: R) -> Result<Vec<(u64, T)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.byte_headers().map_err(parse_error)?.clone();
    let mut out = Vec::new();
    let mut rec = csv::ByteRecord::new();
    while rdr.read_byte_record(&mut rec).map_err(parse_error)? {
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row = rec.deserialize(Some(&headers)).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        out.push((line, row));
    }
    Ok(out)
}

fn check_finite(line: u64, name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Parse {
            line,
            message: format!("{name} must be a nonnegative number, got {v}"),
        })
    }
}

/// Reads raw cumulative cases and deaths. Rows for a region must appear in
/// increasing date order; missing days are filled by carrying the previous
/// day's counts forward.
pub fn read_cases<R: Read>(reader: R) -> Result<CaseTable> {
    let mut table = CaseTable::default();
    let mut filled: BTreeMap<String, usize> = BTreeMap::new();
    for (line, row) in rows::<CaseRow, _>(reader)? {
        let CaseRow {
            date,
            region_id,
            cases,
            deaths,
        } = row;
        check_finite(line, "cases", cases)?;
        check_finite(line, "deaths", deaths)?;
        let region = table.regions.entry(region_id.clone()).or_insert_with(|| RawRegion {
            region_id: region_id.clone(),
            dates: Vec::new(),
            cases: Vec::new(),
            deaths: Vec::new(),
        });
        if let Some(&last) = region.dates.last() {
            if date == last {
                return Err(Error::DuplicateRow {
                    region: region_id,
                    date: date.to_string(),
                });
            }
            if date < last {
                return Err(Error::NonMonotonicDates(region_id));
            }
            let gap = (date - last).num_days() - 1;
            if gap > 0 {
                let (c, d) = (*region.cases.last().unwrap(), *region.deaths.last().unwrap());
                for k in 1..=gap {
                    region.dates.push(last + Duration::days(k));
                    region.cases.push(c);
                    region.deaths.push(d);
                }
                *filled.entry(region_id.clone()).or_default() += gap as usize;
            }
        }
        region.dates.push(date);
        region.cases.push(cases);
        region.deaths.push(deaths);
    }
    table.warnings = filled
        .into_iter()
        .map(|(region, days)| Warning::GapFilled { region, days })
        .collect();
    Ok(table)
}

/// Nationwide cumulative recovered and deaths by date.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NationalSeries {
    pub by_date: BTreeMap<NaiveDate, (f64, f64)>,
}

pub fn read_national<R: Read>(reader: R) -> Result<NationalSeries> {
    let mut by_date = BTreeMap::new();
    for (line, row) in rows::<NationalRow, _>(reader)? {
        check_finite(line, "recovered", row.recovered)?;
        check_finite(line, "deaths", row.deaths)?;
        if by_date.insert(row.date, (row.recovered, row.deaths)).is_some() {
            return Err(Error::DuplicateRow {
                region: "national".into(),
                date: row.date.to_string(),
            });
        }
    }
    Ok(NationalSeries { by_date })
}

pub fn read_populations<R: Read>(reader: R) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (line, row) in rows::<PopulationRow, _>(reader)? {
        if !(row.population.is_finite() && row.population > 0.0) {
            return Err(Error::Parse {
                line,
                message: format!("population of {} must be positive", row.region_id),
            });
        }
        if out.insert(row.region_id.clone(), row.population).is_some() {
            return Err(Error::DuplicateRow {
                region: row.region_id,
                date: "population".into(),
            });
        }
    }
    Ok(out)
}

pub fn read_distances<R: Read>(reader: R) -> Result<Vec<(String, String, f64)>> {
    let mut out = Vec::new();
    for (line, row) in rows::<DistanceRow, _>(reader)? {
        check_finite(line, "miles", row.miles)?;
        out.push((row.region_id_a, row.region_id_b, row.miles));
    }
    Ok(out)
}

/// Recovered counts derived from deaths and the national recovered/deaths ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedRecovered {
    pub values: Vec<f64>,
    /// Days on which the derived series decreases.
    pub non_monotone_days: usize,
}

/// `R(t) = deaths(t) * recovered_nat(t) / deaths_nat(t)`, or 0 on days with no
/// national deaths.
pub fn derive_recovered(deaths: &[f64], national_recovered: &[f64], national_deaths: &[f64]) -> Result<DerivedRecovered> {
    for other in [national_recovered.len(), national_deaths.len()] {
        if other != deaths.len() {
            return Err(Error::LengthMismatch {
                left: deaths.len(),
                right: other,
            });
        }
    }
    let values: Vec<f64> = deaths
        .iter()
        .zip(national_recovered.iter().zip(national_deaths))
        .map(|(&d, (&rec, &nd))| if nd > 0.0 { d * rec / nd } else { 0.0 })
        .collect();
    let non_monotone_days = values.windows(2).filter(|w| w[1] < w[0]).count();
    Ok(DerivedRecovered {
        values,
        non_monotone_days,
    })
}

/// Study-window bounds. Each region starts on its first day on or after
/// `start` with at least one case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyWindow {
    pub start: NaiveDate,
    pub end: Option<NaiveDate>,
}

impl Default for StudyWindow {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date"),
            end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembled {
    pub catalog: RegionCatalog,
    pub warnings: Vec<Warning>,
}

/// Builds a catalog from raw cases. Active infections are
/// `I = cases - deaths - R`, floored at 0, with `R` from [`derive_recovered`].
/// Regions with fewer than 3 days after trimming are dropped with a warning.
pub fn assemble_catalog(
    cases: &CaseTable,
    national: &NationalSeries,
    populations: &BTreeMap<String, f64>,
    distances: &[(String, String, f64)],
    window: &StudyWindow,
) -> Result<Assembled> {
    let mut catalog = RegionCatalog::new();
    let mut warnings = cases.warnings.clone();
    for (id, raw) in &cases.regions {
        let population = *populations.get(id).ok_or_else(|| Error::MissingPopulation(id.clone()))?;
        let keep: Vec<usize> = (0..raw.dates.len())
            .skip_while(|&k| raw.dates[k] < window.start || raw.cases[k] < 1.0)
            .take_while(|&k| window.end.is_none_or(|e| raw.dates[k] <= e))
            .collect();
        if keep.len() < 3 {
            warnings.push(Warning::RegionDropped {
                region: id.clone(),
                days: keep.len(),
            });
            continue;
        }
        let mut nat_rec = Vec::with_capacity(keep.len());
        let mut nat_deaths = Vec::with_capacity(keep.len());
        for &k in &keep {
            let (r, d) = national
                .by_date
                .get(&raw.dates[k])
                .ok_or_else(|| Error::AlignmentError(format!("national data missing {}", raw.dates[k])))?;
            nat_rec.push(*r);
            nat_deaths.push(*d);
        }
        let deaths: Vec<f64> = keep.iter().map(|&k| raw.deaths[k]).collect();
        let derived = derive_recovered(&deaths, &nat_rec, &nat_deaths)?;
        if derived.non_monotone_days > 0 {
            warnings.push(Warning::NonMonotoneRecovered {
                region: id.clone(),
                days: derived.non_monotone_days,
            });
        }
        let infected: Vec<f64> = keep
            .iter()
            .zip(&derived.values)
            .map(|(&k, r)| (raw.cases[k] - raw.deaths[k] - r).max(0.0))
            .collect();
        let dates = keep.iter().map(|&k| raw.dates[k]).collect();
        catalog.add_series(EpidemicSeries::new(id.clone(), dates, infected, derived.values, population)?);
    }
    add_distances(&mut catalog, distances)?;
    for region in catalog.isolated() {
        warnings.push(Warning::Isolated { region });
    }
    Ok(Assembled { catalog, warnings })
}

fn add_distances(catalog: &mut RegionCatalog, distances: &[(String, String, f64)]) -> Result<()> {
    for (a, b, miles) in distances {
        catalog.set_distance(a, b, *miles)?;
    }
    Ok(())
}

fn open(dir: &Path, name: &str) -> Result<std::fs::File> {
    std::fs::File::open(dir.join(name)).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.join(name).display())))
    })
}

/// Reads the raw layout from `dir` and assembles the catalog. A missing
/// `distances.csv` leaves every region isolated.
pub fn load_raw_dir(dir: &Path, window: &StudyWindow) -> Result<Assembled> {
    let cases = read_cases(open(dir, CASES_FILE)?)?;
    let national = read_national(open(dir, NATIONAL_FILE)?)?;
    let populations = read_populations(open(dir, POPULATION_FILE)?)?;
    let distances = if dir.join(DISTANCES_FILE).exists() {
        read_distances(open(dir, DISTANCES_FILE)?)?
    } else {
        Vec::new()
    };
    assemble_catalog(&cases, &national, &populations, &distances, window)
}

/// Reads `date,region_id,infected,recovered` rows. Each region's dates must be
/// contiguous and increasing.
pub fn read_series_table<R: Read>(reader: R, populations: &BTreeMap<String, f64>) -> Result<Vec<EpidemicSeries>> {
    let mut grouped: BTreeMap<String, (Vec<NaiveDate>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (line, row) in rows::<SeriesRow, _>(reader)? {
        check_finite(line, "infected", row.infected)?;
        check_finite(line, "recovered", row.recovered)?;
        let entry = grouped.entry(row.region_id.clone()).or_default();
        if let Some(&last) = entry.0.last() {
            if row.date == last {
                return Err(Error::DuplicateRow {
                    region: row.region_id,
                    date: row.date.to_string(),
                });
            }
            if row.date < last {
                return Err(Error::NonMonotonicDates(row.region_id));
            }
        }
        entry.0.push(row.date);
        entry.1.push(row.infected);
        entry.2.push(row.recovered);
    }
    grouped
        .into_iter()
        .map(|(id, (dates, i, r))| {
            let n = *populations.get(&id).ok_or_else(|| Error::MissingPopulation(id.clone()))?;
            EpidemicSeries::new(id, dates, i, r, n)
        })
        .collect()
}

/// Reads the processed layout (`series.csv`, `population.csv`, optional
/// `distances.csv`) from `dir`.
pub fn load_catalog_dir(dir: &Path) -> Result<RegionCatalog> {
    let populations = read_populations(open(dir, POPULATION_FILE)?)?;
    let mut catalog = RegionCatalog::new();
    for s in read_series_table(open(dir, SERIES_FILE)?, &populations)? {
        catalog.add_series(s);
    }
    // Populations without series are kept so distance-only regions survive.
    for (id, n) in populations {
        catalog.populations.entry(id).or_insert(n);
    }
    if dir.join(DISTANCES_FILE).exists() {
        add_distances(&mut catalog, &read_distances(open(dir, DISTANCES_FILE)?)?)?;
    }
    Ok(catalog)
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(w)
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush()?;
    Ok(())
}

fn write_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv write failed: {other:?}")),
    }
}

pub fn write_series_table<'a, W: Write>(series: impl IntoIterator<Item = &'a EpidemicSeries>, w: W) -> Result<()> {
    let mut wtr = csv_writer(w);
    for s in series {
        for k in 0..s.len() {
            wtr.serialize(SeriesRow {
                date: s.dates[k],
                region_id: s.region_id.clone(),
                infected: s.infected[k],
                recovered: s.recovered[k],
            })
            .map_err(write_err)?;
        }
    }
    finish(wtr)
}

pub fn write_populations<W: Write>(populations: &BTreeMap<String, f64>, w: W) -> Result<()> {
    let mut wtr = csv_writer(w);
    for (id, n) in populations {
        wtr.serialize(PopulationRow {
            region_id: id.clone(),
            population: *n,
        })
        .map_err(write_err)?;
    }
    finish(wtr)
}

pub fn write_distances<W: Write>(catalog: &RegionCatalog, w: W) -> Result<()> {
    let mut wtr = csv_writer(w);
    for (a, m) in &catalog.distances {
        for (b, miles) in m {
            wtr.serialize(DistanceRow {
                region_id_a: a.clone(),
                region_id_b: b.clone(),
                miles: *miles,
            })
            .map_err(write_err)?;
        }
    }
    finish(wtr)
}

/// Writes the processed layout into `dir`, creating it if needed.
pub fn save_catalog_dir(catalog: &RegionCatalog, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_series_table(catalog.series.values(), std::fs::File::create(dir.join(SERIES_FILE))?)?;
    write_populations(&catalog.populations, std::fs::File::create(dir.join(POPULATION_FILE))?)?;
    write_distances(catalog, std::fs::File::create(dir.join(DISTANCES_FILE))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn empty_cases_file_is_empty_table() {
        let t = read_cases("date,region_id,cases,deaths\n".as_bytes()).unwrap();
        assert!(t.regions.is_empty() && t.warnings.is_empty());
    }

    #[test]
    fn three_rows_round_trip_exactly() {
        let csv = "date,region_id,cases,deaths\n2020-03-01,NY,1,0\n2020-03-02,NY,3.5,1\n2020-03-03,NY,10,2\n";
        let t = read_cases(csv.as_bytes()).unwrap();
        let ny = &t.regions["NY"];
        assert_eq!(ny.dates, vec![d("2020-03-01"), d("2020-03-02"), d("2020-03-03")]);
        assert_eq!(ny.cases, vec![1.0, 3.5, 10.0]);
        assert_eq!(ny.deaths, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn two_day_gap_is_carried_forward() {
        let csv = "date,region_id,cases,deaths\n2020-03-01,A,1,0\n2020-03-04,A,9,1\n2020-03-05,A,12,1\n";
        let t = read_cases(csv.as_bytes()).unwrap();
        let a = &t.regions["A"];
        assert_eq!(a.dates.len(), 5);
        assert_eq!(a.cases, vec![1.0, 1.0, 1.0, 9.0, 12.0]);
        assert_eq!(
            t.warnings,
            vec![Warning::GapFilled {
                region: "A".into(),
                days: 2
            }]
        );
    }

    #[test]
    fn bad_rows_are_rejected() {
        let dup = "date,region_id,cases,deaths\n2020-03-01,A,1,0\n2020-03-01,A,2,0\n";
        assert!(matches!(read_cases(dup.as_bytes()), Err(Error::DuplicateRow { .. })));
        let back = "date,region_id,cases,deaths\n2020-03-02,A,1,0\n2020-03-01,A,2,0\n";
        assert!(matches!(read_cases(back.as_bytes()), Err(Error::NonMonotonicDates(r)) if r == "A"));
        let junk = "date,region_id,cases,deaths\n2020-03-01,A,1,0\n2020-03-02,A,many,0\n";
        assert!(matches!(read_cases(junk.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let neg = "date,region_id,cases,deaths\n2020-03-01,A,-1,0\n";
        assert!(matches!(read_cases(neg.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn derived_recovered_cases() {
        let same = derive_recovered(&[1.0, 2.0], &[10.0, 30.0], &[1.0, 2.0]).unwrap();
        assert_eq!(same.values, vec![10.0, 30.0]);
        let half = derive_recovered(&[1.0, 2.0, 3.0], &[8.0, 8.0, 8.0], &[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(half.values, vec![4.0, 4.0, 4.0]);
        let zero = derive_recovered(&[0.0, 1.0], &[5.0, 6.0], &[0.0, 2.0]).unwrap();
        assert_eq!(zero.values, vec![0.0, 3.0]);
        // National ratio dips on day 3 although every input is nondecreasing.
        let dip = derive_recovered(&[1.0, 1.0, 1.0], &[10.0, 20.0, 21.0], &[1.0, 1.0, 3.0]).unwrap();
        assert_eq!(dip.values, vec![10.0, 20.0, 7.0]);
        assert_eq!(dip.non_monotone_days, 1);
        assert!(matches!(derive_recovered(&[1.0], &[1.0, 2.0], &[1.0]), Err(Error::LengthMismatch { .. })));
    }

    fn fixture() -> (CaseTable, NationalSeries, BTreeMap<String, f64>) {
        let mut csv = String::from("date,region_id,cases,deaths\n");
        for (k, day) in ["2020-02-29", "2020-03-01", "2020-03-02", "2020-03-03", "2020-03-04"].iter().enumerate() {
            for (r, scale) in [("A", 1.0), ("B", 2.0), ("C", 3.0)] {
                let cases = if k == 0 { 0.0 } else { scale * (k * k) as f64 * 10.0 };
                csv.push_str(&format!("{day},{r},{cases},{}\n", k as f64 * scale));
            }
        }
        let cases = read_cases(csv.as_bytes()).unwrap();
        let nat = "date,recovered,deaths\n2020-02-29,0,0\n2020-03-01,2,1\n2020-03-02,4,2\n2020-03-03,6,3\n2020-03-04,8,4\n";
        let national = read_national(nat.as_bytes()).unwrap();
        let pops = [("A", 1e5), ("B", 2e5), ("C", 3e5)].map(|(k, v)| (k.to_string(), v)).into();
        (cases, national, pops)
    }

    #[test]
    fn assembled_catalog_flags_isolated_region() {
        let (cases, national, pops) = fixture();
        let dist = vec![("A".to_string(), "B".to_string(), 50.0), ("B".to_string(), "A".to_string(), 50.0)];
        let out = assemble_catalog(&cases, &national, &pops, &dist, &StudyWindow::default()).unwrap();
        assert_eq!(out.catalog.series.len(), 3);
        assert_eq!(out.catalog.isolated(), vec!["C".to_string()]);
        assert!(out.warnings.contains(&Warning::Isolated { region: "C".into() }));
        // Trim drops 2020-02-29; day 1 has 10 cases, 1 death, R = 1 * 2 / 1.
        let a = out.catalog.get("A").unwrap();
        assert_eq!(a.dates[0], d("2020-03-01"));
        assert_eq!(a.recovered, vec![2.0, 4.0, 6.0, 8.0]);
        assert_eq!(a.infected, vec![7.0, 34.0, 81.0, 148.0]);
    }

    #[test]
    fn single_region_has_no_neighbours() {
        let (mut cases, national, pops) = fixture();
        cases.regions.retain(|k, _| k == "A");
        let out = assemble_catalog(&cases, &national, &pops, &[], &StudyWindow::default()).unwrap();
        assert_eq!(out.catalog.series.len(), 1);
        assert!(out.catalog.connected().is_empty());
    }

    #[test]
    fn missing_population_is_an_error() {
        let (cases, national, mut pops) = fixture();
        pops.remove("B");
        let err = assemble_catalog(&cases, &national, &pops, &[], &StudyWindow::default()).unwrap_err();
        assert!(matches!(err, Error::MissingPopulation(r) if r == "B"));
    }

    #[test]
    fn catalog_survives_csv_and_json_round_trips() {
        let (cases, national, pops) = fixture();
        let dist = vec![("A".to_string(), "B".to_string(), 50.25), ("C".to_string(), "B".to_string(), 1.0 / 3.0)];
        let cat = assemble_catalog(&cases, &national, &pops, &dist, &StudyWindow::default())
            .unwrap()
            .catalog;
        let dir = tempfile::tempdir().unwrap();
        save_catalog_dir(&cat, dir.path()).unwrap();
        assert_eq!(load_catalog_dir(dir.path()).unwrap(), cat);
        let json = serde_json::to_string(&cat).unwrap();
        assert_eq!(serde_json::from_str::<RegionCatalog>(&json).unwrap(), cat);
    }
}
