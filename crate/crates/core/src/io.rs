//! CSV and JSON emission, dataset ingestion, and run manifests.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bands::{band_area, ConfidenceBand};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::roc::RocCurve;
use crate::synth::{ExperimentConfig, ExperimentResult, Summary};

pub const OUT_DIR_ENV: &str = "SVMROC_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "svmroc-out";

/// Explicit directory, else `$SVMROC_OUT_DIR`, else `./svmroc-out`.
pub fn output_dir(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUT_DIR),
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_f64(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..=15).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{v:.16e}")
    }
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a headed CSV. Every column except `label_column` is a numeric
/// feature, in header order; labels equal to `positive_value` map to +1 and
/// the other value to -1.
pub fn load_csv(path: &Path, label_column: &str, positive_value: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::InvalidArgument(format!("no column named {label_column:?}")))?;
    let feature_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(i, h)| (i, h.trim().to_string()))
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::InvalidArgument("no feature columns".into()));
    }

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        for (i, name) in &feature_cols {
            let cell = record.get(*i).unwrap_or("").trim();
            if cell.is_empty() {
                return Err(Error::CsvCell {
                    row,
                    column: name.clone(),
                    message: "missing value".into(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::CsvCell {
                row,
                column: name.clone(),
                message: format!("{cell:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::CsvCell {
                    row,
                    column: name.clone(),
                    message: format!("{cell:?} is not finite"),
                });
            }
            features.push(v);
        }
        let label = record.get(label_idx).unwrap_or("").trim();
        if label.is_empty() {
            return Err(Error::CsvCell {
                row,
                column: label_column.to_string(),
                message: "missing label".into(),
            });
        }
        raw_labels.push(label.to_string());
    }

    let distinct: BTreeSet<&str> = raw_labels.iter().map(String::as_str).collect();
    if distinct.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "label column {label_column:?} must take exactly two values, found {}: {:?}",
            distinct.len(),
            distinct
        )));
    }
    if !distinct.contains(positive_value) {
        return Err(Error::InvalidArgument(format!(
            "positive value {positive_value:?} does not occur in column {label_column:?}"
        )));
    }
    let labels = raw_labels
        .iter()
        .map(|l| if l == positive_value { 1 } else { -1 })
        .collect();
    Dataset::from_flat(features, labels, feature_cols.len())
}

/// Feature columns `x1..xp` and a `label` column of +1/-1.
pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=data.dim()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (x, &a) in data.rows().zip(data.labels()) {
        let mut rec: Vec<String> = x.iter().map(|&v| format_f64(v)).collect();
        rec.push(a.to_string());
        w.write_record(&rec)?;
    }
    finish_csv(path, w)
}

fn finish_csv(path: &Path, w: csv::Writer<Vec<u8>>) -> Result<()> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    atomic_write(path, &bytes)
}

pub fn write_curve_csv(path: &Path, curve: &RocCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["alpha", "fpf", "tpf"])?;
    for p in curve.points() {
        w.write_record([format_f64(p.alpha), format_f64(p.fpf), format_f64(p.tpf)])?;
    }
    finish_csv(path, w)
}

pub fn read_curve_csv(path: &Path) -> Result<RocCurve> {
    let rows = read_numeric_table(path, &["alpha", "fpf", "tpf"])?;
    RocCurve::from_triples(&rows.iter().map(|r| (r[0], r[1], r[2])).collect::<Vec<_>>())
}

pub fn write_band_csv(path: &Path, band: &ConfidenceBand) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["z", "y_lower", "y_hat", "y_upper"])?;
    for k in 0..band.z_grid.len() {
        w.write_record([
            format_f64(band.z_grid[k]),
            format_f64(band.lower[k]),
            format_f64(band.point_estimate[k]),
            format_f64(band.upper[k]),
        ])?;
    }
    finish_csv(path, w)
}

/// Band rows `(z, y_lower, y_hat, y_upper)`.
pub fn read_band_csv(path: &Path) -> Result<Vec<[f64; 4]>> {
    Ok(read_numeric_table(path, &["z", "y_lower", "y_hat", "y_upper"])?
        .into_iter()
        .map(|r| [r[0], r[1], r[2], r[3]])
        .collect())
}

fn read_numeric_table(path: &Path, columns: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h.trim() == *c)
                .ok_or_else(|| Error::InvalidArgument(format!("{} has no column {c:?}", path.display())))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = idx
            .iter()
            .zip(columns)
            .map(|(&i, c)| {
                let cell = record.get(i).unwrap_or("").trim();
                cell.parse::<f64>().map_err(|_| Error::CsvCell {
                    row: r + 1,
                    column: (*c).to_string(),
                    message: format!("{cell:?} is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSummary {
    pub p_star: f64,
    pub area: f64,
    #[serde(rename = "B")]
    pub n_boot: usize,
    pub gamma_bar: f64,
    pub seed: u64,
}

impl BandSummary {
    pub fn of(band: &ConfidenceBand) -> Self {
        Self {
            p_star: band.p_star,
            area: band_area(band),
            n_boot: band.n_boot,
            gamma_bar: band.gamma_bar,
            seed: band.rng_seed,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub n: usize,
    pub p: usize,
    pub q: f64,
    pub form: String,
    pub method: String,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
}

/// One row per (method, metric), plus coverage rows when bands were run.
pub fn table_rows(cfg: &ExperimentConfig, result: &ExperimentResult) -> Vec<TableRow> {
    let row = |method: &str, metric: &str, s: Summary| TableRow {
        n: cfg.n,
        p: cfg.model.p,
        q: cfg.model.q,
        form: cfg.model.form.name().into(),
        method: method.into(),
        metric: metric.into(),
        mean: s.mean,
        sd: s.sd,
    };
    let mut rows = Vec::new();
    for m in &result.methods {
        let name = m.method.name();
        rows.push(row(name, "auc", m.auc));
        rows.push(row(name, "optimal_se", m.optimal_se));
        rows.push(row(name, "optimal_sp", m.optimal_sp));
        rows.push(row(name, "unweighted_se", m.unweighted_se));
        rows.push(row(name, "unweighted_sp", m.unweighted_sp));
    }
    if let Some(c) = &result.coverage {
        rows.push(row("linear_svm", "coverage", Summary { mean: c.coverage, sd: 0.0 }));
        rows.push(row("linear_svm", "band_area", c.area));
    }
    rows
}

pub fn write_table_csv(path: &Path, rows: &[TableRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "p", "q", "form", "method", "metric", "mean", "sd"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.p.to_string(),
            format_f64(r.q),
            r.form.clone(),
            r.method.clone(),
            r.metric.clone(),
            format_f64(r.mean),
            format_f64(r.sd),
        ])?;
    }
    finish_csv(path, w)
}

/// Everything needed to rerun a command and regenerate its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// Fully resolved configuration, defaults included.
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub wall_seconds: f64,
    pub outputs: Vec<String>,
}

pub fn config_hash(config: &serde_json::Value) -> String {
    // serde_json maps are ordered by key, so this serialization is canonical.
    let bytes = serde_json::to_vec(config).expect("json values always serialize");
    hex::encode(Sha256::digest(&bytes))
}

pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}
