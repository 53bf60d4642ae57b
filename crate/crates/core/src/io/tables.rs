//! CSV persistence for datasets, grids and every result table.
//!
//! Reals are written in Rust's shortest round-trip form, so loading a saved
//! table reproduces every value bit for bit.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use csv::StringRecord;

use crate::domain::{Mechanism, PrivacySetting, SensorDataset};
use crate::error::{Error, Result};
use crate::hetero::{HeatMetric, HeatStatistic, HeatmapCell, HeteroRunResult};
use crate::mechanisms::{GridProvenance, SettingGrid};
use crate::metrics::{ErrorStats, NormalizationConstants};
use crate::optimizer::{BinResult, TrajectoryPoint};
use crate::sweep::EvaluationRecord;

pub fn fmt_real(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_real).unwrap_or_default()
}

fn fmt_params(params: &[f64]) -> String {
    params.iter().map(|p| fmt_real(*p)).collect::<Vec<_>>().join(";")
}

/// One parsed CSV row with its source line for diagnostics.
pub struct Row<'a> {
    record: &'a StringRecord,
    path: &'a Path,
    line: u64,
}

impl Row<'_> {
    fn err(&self, message: String) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message,
        }
    }

    pub fn line(&self) -> u64 {
        self.line
    }

    pub fn str(&self, i: usize) -> &str {
        self.record.get(i).unwrap_or("")
    }

    pub fn f64(&self, i: usize) -> Result<f64> {
        let s = self.str(i);
        s.parse::<f64>()
            .map_err(|_| self.err(format!("column {}: '{s}' is not a number", i + 1)))
    }

    pub fn opt_f64(&self, i: usize) -> Result<Option<f64>> {
        if self.str(i).is_empty() {
            Ok(None)
        } else {
            self.f64(i).map(Some)
        }
    }

    pub fn u64(&self, i: usize) -> Result<u64> {
        let s = self.str(i);
        s.parse::<u64>()
            .map_err(|_| self.err(format!("column {}: '{s}' is not a non-negative integer", i + 1)))
    }

    pub fn usize(&self, i: usize) -> Result<usize> {
        self.u64(i).map(|v| v as usize)
    }

    pub fn params(&self, i: usize) -> Result<Vec<f64>> {
        let s = self.str(i);
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(';')
            .map(|p| p.parse::<f64>().map_err(|_| self.err(format!("bad parameter '{p}'"))))
            .collect()
    }

    pub fn setting(&self, id: usize, mechanism: usize, params: usize) -> Result<PrivacySetting> {
        let mech: Mechanism = self
            .str(mechanism)
            .parse()
            .map_err(|e: Error| self.err(e.to_string()))?;
        PrivacySetting::with_id(mech, self.params(params)?, self.str(id)).map_err(|e| self.err(e.to_string()))
    }
}

/// A table with a fixed header that round-trips through CSV.
pub trait CsvTable: Sized {
    const COLUMNS: &'static [&'static str];
    fn to_row(&self) -> Vec<String>;
    fn from_row(row: &Row<'_>) -> Result<Self>;
}

fn check_header(path: &Path, header: &StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = header.iter().collect();
    if let Some(missing) = expected.iter().find(|c| !got.contains(c)) {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            message: format!("missing column '{missing}'"),
        });
    }
    if let Some(extra) = got.iter().find(|c| !expected.contains(c)) {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            message: format!("unexpected column '{extra}'"),
        });
    }
    if got != expected {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            message: format!("columns out of order, expected {}", expected.join(",")),
        });
    }
    Ok(())
}

pub fn write_table<T: CsvTable, W: Write>(writer: W, rows: &[T], with_header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    if with_header {
        w.write_record(T::COLUMNS)?;
    }
    for r in rows {
        w.write_record(r.to_row())?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_table<T: CsvTable>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let file = BufWriter::new(File::create(path.as_ref())?);
    write_table(file, rows, true)
}

fn parse_table<T: CsvTable>(path: &Path, data: &[u8]) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(data);
    let header = reader.headers()?.clone();
    check_header(path, &header, T::COLUMNS)?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        out.push(T::from_row(&Row {
            record: &rec,
            path,
            line,
        })?);
    }
    Ok(out)
}

pub fn load_table<T: CsvTable>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let mut data = Vec::new();
    File::open(path)?.read_to_end(&mut data)?;
    parse_table(path, &data)
}

/// Loads the complete rows of a table that may end in a partially written
/// line. Returns the rows and the byte length of the intact prefix.
pub fn load_table_prefix<T: CsvTable>(path: impl AsRef<Path>) -> Result<(Vec<T>, u64)> {
    let path = path.as_ref();
    let mut data = Vec::new();
    File::open(path)?.read_to_end(&mut data)?;
    let intact = data.iter().rposition(|&b| b == b'\n').map(|i| i + 1).unwrap_or(0);
    if intact == 0 {
        return Ok((Vec::new(), 0));
    }
    Ok((parse_table(path, &data[..intact])?, intact as u64))
}

/// Header and rows of an arbitrary CSV file, as strings.
pub fn load_raw(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path.as_ref())?;
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| Ok(r?.iter().map(str::to_string).collect()))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

impl CsvTable for EvaluationRecord {
    const COLUMNS: &'static [&'static str] = &[
        "setting_id",
        "mechanism",
        "params",
        "subset_size",
        "subset_index",
        "repetition",
        "mean_L",
        "std_L",
        "entropy_L",
        "mean_E",
        "std_E",
        "entropy_E",
        "exclusions",
        "seed",
    ];

    fn to_row(&self) -> Vec<String> {
        vec![
            self.setting.id().to_string(),
            self.setting.mechanism().to_string(),
            fmt_params(self.setting.params()),
            self.subset_size.to_string(),
            self.subset_index.to_string(),
            self.repetition.to_string(),
            fmt_real(self.local_stats.mean),
            fmt_real(self.local_stats.std),
            fmt_real(self.local_stats.entropy),
            fmt_real(self.global_stats.mean),
            fmt_real(self.global_stats.std),
            fmt_real(self.global_stats.entropy),
            self.exclusions.to_string(),
            self.seed.to_string(),
        ]
    }

    fn from_row(row: &Row<'_>) -> Result<Self> {
        Ok(Self {
            setting: row.setting(0, 1, 2)?,
            subset_size: row.usize(3)?,
            subset_index: row.usize(4)?,
            repetition: row.usize(5)?,
            local_stats: ErrorStats {
                mean: row.f64(6)?,
                std: row.f64(7)?,
                entropy: row.f64(8)?,
            },
            global_stats: ErrorStats {
                mean: row.f64(9)?,
                std: row.f64(10)?,
                entropy: row.f64(11)?,
            },
            exclusions: row.usize(12)?,
            seed: row.u64(13)?,
        })
    }
}

impl CsvTable for BinResult {
    const COLUMNS: &'static [&'static str] = &[
        "bin_index",
        "lo",
        "hi",
        "setting_id",
        "mechanism",
        "params",
        "objective",
        "median_privacy",
        "median_utility",
    ];

    fn to_row(&self) -> Vec<String> {
        let (id, mech, params) = match &self.winner {
            Some(s) => (s.id().to_string(), s.mechanism().to_string(), fmt_params(s.params())),
            None => Default::default(),
        };
        vec![
            self.bin_index.to_string(),
            fmt_real(self.lo),
            fmt_real(self.hi),
            id,
            mech,
            params,
            fmt_opt(self.objective),
            fmt_opt(self.median_privacy),
            fmt_opt(self.median_utility),
        ]
    }

    fn from_row(row: &Row<'_>) -> Result<Self> {
        let winner = if row.str(3).is_empty() {
            None
        } else {
            Some(row.setting(3, 4, 5)?)
        };
        Ok(Self {
            bin_index: row.usize(0)?,
            lo: row.f64(1)?,
            hi: row.f64(2)?,
            winner,
            objective: row.opt_f64(6)?,
            median_privacy: row.opt_f64(7)?,
            median_utility: row.opt_f64(8)?,
        })
    }
}

impl CsvTable for TrajectoryPoint {
    const COLUMNS: &'static [&'static str] = &["privacy", "min_utility", "median_utility", "max_utility"];

    fn to_row(&self) -> Vec<String> {
        vec![
            fmt_real(self.privacy),
            fmt_real(self.min_utility),
            fmt_real(self.median_utility),
            fmt_real(self.max_utility),
        ]
    }

    fn from_row(row: &Row<'_>) -> Result<Self> {
        Ok(Self {
            privacy: row.f64(0)?,
            min_utility: row.f64(1)?,
            median_utility: row.f64(2)?,
            max_utility: row.f64(3)?,
        })
    }
}

impl CsvTable for HeatmapCell {
    const COLUMNS: &'static [&'static str] = &["dominant_setting", "dominant_share", "metric", "statistic", "value"];

    fn to_row(&self) -> Vec<String> {
        vec![
            self.dominant_setting.clone(),
            fmt_real(self.dominant_share),
            self.metric.as_str().to_string(),
            self.statistic.as_str().to_string(),
            fmt_real(self.value),
        ]
    }

    fn from_row(row: &Row<'_>) -> Result<Self> {
        let metric = match row.str(2) {
            "privacy" => HeatMetric::Privacy,
            "utility" => HeatMetric::Utility,
            other => return Err(row.err(format!("unknown metric '{other}'"))),
        };
        let statistic = match row.str(3) {
            "median" => HeatStatistic::Median,
            "iqr" => HeatStatistic::Iqr,
            other => return Err(row.err(format!("unknown statistic '{other}'"))),
        };
        Ok(Self {
            dominant_setting: row.str(0).to_string(),
            dominant_share: row.f64(1)?,
            metric,
            statistic,
            value: row.f64(4)?,
        })
    }
}

impl CsvTable for NormalizationConstants {
    const COLUMNS: &'static [&'static str] = &[
        "max_mean_L",
        "max_std_L",
        "max_entropy_L",
        "max_mean_E",
        "max_std_E",
        "max_entropy_E",
    ];

    fn to_row(&self) -> Vec<String> {
        self.as_array().iter().map(|v| fmt_real(*v)).collect()
    }

    fn from_row(row: &Row<'_>) -> Result<Self> {
        let mut v = [0.0; 6];
        for (i, slot) in v.iter_mut().enumerate() {
            *slot = row.f64(i)?;
        }
        NormalizationConstants::new(v).map_err(|e| row.err(e.to_string()))
    }
}

/// Summary line of one simulated histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroLogRow {
    pub histogram: String,
    pub dominant_setting: Option<String>,
    pub dominant_share: Option<f64>,
    pub privacy_median: Option<f64>,
    pub privacy_iqr: Option<f64>,
    pub utility_median: Option<f64>,
    pub utility_iqr: Option<f64>,
    pub repetitions: usize,
}

impl From<&HeteroRunResult> for HeteroLogRow {
    fn from(r: &HeteroRunResult) -> Self {
        Self {
            histogram: r.histogram.label(),
            dominant_setting: r.dominant.as_ref().map(|d| d.0.clone()),
            dominant_share: r.dominant.as_ref().map(|d| d.1),
            privacy_median: r.privacy_median(),
            privacy_iqr: r.privacy_iqr(),
            utility_median: r.utility_median(),
            utility_iqr: r.utility_iqr(),
            repetitions: r.runs.len(),
        }
    }
}

impl CsvTable for HeteroLogRow {
    const COLUMNS: &'static [&'static str] = &[
        "histogram",
        "dominant_setting",
        "dominant_share",
        "privacy_median",
        "privacy_iqr",
        "utility_median",
        "utility_iqr",
        "repetitions",
    ];

    fn to_row(&self) -> Vec<String> {
        vec![
            self.histogram.clone(),
            self.dominant_setting.clone().unwrap_or_default(),
            fmt_opt(self.dominant_share),
            fmt_opt(self.privacy_median),
            fmt_opt(self.privacy_iqr),
            fmt_opt(self.utility_median),
            fmt_opt(self.utility_iqr),
            self.repetitions.to_string(),
        ]
    }

    fn from_row(row: &Row<'_>) -> Result<Self> {
        Ok(Self {
            histogram: row.str(0).to_string(),
            dominant_setting: Some(row.str(1).to_string()).filter(|s| !s.is_empty()),
            dominant_share: row.opt_f64(2)?,
            privacy_median: row.opt_f64(3)?,
            privacy_iqr: row.opt_f64(4)?,
            utility_median: row.opt_f64(5)?,
            utility_iqr: row.opt_f64(6)?,
            repetitions: row.usize(7)?,
        })
    }
}

/// One point of an empirical CDF curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfPoint {
    pub series: String,
    pub x: f64,
    pub cdf: f64,
}

impl CsvTable for CdfPoint {
    const COLUMNS: &'static [&'static str] = &["series", "x", "cdf"];

    fn to_row(&self) -> Vec<String> {
        vec![self.series.clone(), fmt_real(self.x), fmt_real(self.cdf)]
    }

    fn from_row(row: &Row<'_>) -> Result<Self> {
        Ok(Self {
            series: row.str(0).to_string(),
            x: row.f64(1)?,
            cdf: row.f64(2)?,
        })
    }
}

/// Writes `user_id,slot_index,value`, one row per cell; missing cells have an
/// empty value.
pub fn save_dataset_csv(path: impl AsRef<Path>, ds: &SensorDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    writeln!(w, "user_id,slot_index,value")?;
    for (u, id) in ds.user_ids().iter().enumerate() {
        for (t, (v, m)) in ds.values(u).iter().zip(ds.missing(u)).enumerate() {
            if *m {
                writeln!(w, "{id},{t},")?;
            } else {
                writeln!(w, "{id},{t},{}", fmt_real(*v))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `user_id,slot_index,value` into a dense dataset covering the
/// observed slot range; users keep their order of first appearance and
/// cells absent from the file are missing.
pub fn load_csv(path: impl AsRef<Path>, slots_per_period: usize) -> Result<SensorDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    check_header(path, reader.headers()?, &["user_id", "slot_index", "value"])?;

    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut users: Vec<String> = Vec::new();
    let mut user_index: HashMap<String, usize> = HashMap::new();
    let mut cells: BTreeMap<(usize, u64), Option<f64>> = BTreeMap::new();
    let (mut min_slot, mut max_slot) = (u64::MAX, 0u64);
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 3 {
            return Err(parse_err(line, format!("expected 3 fields, found {}", rec.len())));
        }
        let id = rec[0].trim();
        if id.is_empty() {
            return Err(parse_err(line, "empty user_id".into()));
        }
        let slot: u64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("slot_index '{}' is not a non-negative integer", &rec[1])))?;
        let raw = rec[2].trim();
        let value = if raw.is_empty() {
            None
        } else {
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(line, format!("value '{raw}' is not a number")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(parse_err(line, format!("value {raw} must be finite and non-negative")));
            }
            Some(v)
        };
        let u = *user_index.entry(id.to_string()).or_insert_with(|| {
            users.push(id.to_string());
            users.len() - 1
        });
        if cells.insert((u, slot), value).is_some() {
            return Err(parse_err(line, format!("duplicate entry for user {id} slot {slot}")));
        }
        min_slot = min_slot.min(slot);
        max_slot = max_slot.max(slot);
    }
    if users.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "{} contains no readings",
            path.display()
        )));
    }
    let n_slots = (max_slot - min_slot + 1) as usize;
    let mut values = vec![0.0; users.len() * n_slots];
    let mut missing = vec![true; users.len() * n_slots];
    for ((u, slot), v) in cells {
        if let Some(v) = v {
            let i = u * n_slots + (slot - min_slot) as usize;
            values[i] = v;
            missing[i] = false;
        }
    }
    SensorDataset::new(users, n_slots, slots_per_period, values, missing)
}

/// Writes `id,mechanism,p0..p{k-1}` with `k` the longest parameter vector.
pub fn save_grid(path: impl AsRef<Path>, grid: &SettingGrid) -> Result<()> {
    let k = grid.settings().iter().map(|s| s.params().len()).max().unwrap_or(0);
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(File::create(path.as_ref())?));
    let mut header = vec!["id".to_string(), "mechanism".to_string()];
    header.extend((0..k).map(|i| format!("p{i}")));
    w.write_record(&header)?;
    for s in grid.settings() {
        let mut row = vec![s.id().to_string(), s.mechanism().to_string()];
        row.extend((0..k).map(|i| s.params().get(i).map(|p| fmt_real(*p)).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a grid written by [`save_grid`] (or by hand). Parameters stop at
/// the first empty cell.
pub fn load_grid(path: impl AsRef<Path>) -> Result<SettingGrid> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = reader.headers()?.clone();
    let k = header.len().saturating_sub(2);
    let mut expected = vec!["id".to_string(), "mechanism".to_string()];
    expected.extend((0..k).map(|i| format!("p{i}")));
    let expected: Vec<&str> = expected.iter().map(String::as_str).collect();
    check_header(path, &header, &expected)?;

    let mut settings = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row = Row {
            record: &rec,
            path,
            line,
        };
        let mech: Mechanism = row.str(1).parse().map_err(|e: Error| row.err(e.to_string()))?;
        let mut params = Vec::new();
        for i in 2..2 + k {
            match row.opt_f64(i)? {
                Some(v) => params.push(v),
                None => break,
            }
        }
        settings.push(PrivacySetting::with_id(mech, params, row.str(0)).map_err(|e| row.err(e.to_string()))?);
    }
    SettingGrid::new(settings, GridProvenance::Custom)
}
