//! Versioned CSV tables.
//!
//! Every file starts with a `# <schema> v<version>` line ahead of the CSV
//! header. Readers refuse other schemas and versions.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RESULTS_SCHEMA: &str = "smoothgnn-results";
pub const RESULTS_VERSION: u32 = 1;
pub const PLOT_SCHEMA: &str = "smoothgnn-plot";
pub const PLOT_VERSION: u32 = 1;
pub const METRICS_SCHEMA: &str = "smoothgnn-metrics";
pub const METRICS_VERSION: u32 = 1;

/// One trained (model, seed, sweep point).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment_id: String,
    pub dataset: String,
    pub model: String,
    pub seed: u64,
    /// `rounds`, `fraction`, or empty outside sweeps.
    pub sweep_param: String,
    pub sweep_value: Option<f64>,
    pub lambda_f: f64,
    pub lambda_l: f64,
    pub kl: f64,
    pub test_f1: f64,
    pub wall_time_s: f64,
}

impl ResultRow {
    /// Everything except the wall time, which never reproduces.
    pub fn payload(&self) -> ResultRow {
        ResultRow {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

/// Aggregate over seeds for one model at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub sweep_param: String,
    pub sweep_value: f64,
    pub lambda_f: f64,
    pub lambda_l: f64,
    pub kl: f64,
    pub model: String,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub dataset: String,
    pub nodes: usize,
    pub edges: usize,
    pub lambda_f: f64,
    pub lambda_l: f64,
    pub labeled_edge_coverage: f64,
    pub kl: f64,
    pub chi_square: f64,
    pub noise_power_mean: f64,
    pub noise_power_sum: f64,
}

fn version_line(schema: &str, version: u32) -> String {
    format!("# {schema} v{version}")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Results(format!("{}: {e}", path.display()))
}

/// Appends rows, writing the version and header lines when the file is new
/// or empty. Appending to a file of another schema or version fails.
pub fn append_rows<R: Serialize>(path: &Path, schema: &str, version: u32, rows: &[R]) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    if !fresh {
        check_version(path, schema, version)?;
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    if fresh {
        writeln!(file, "{}", version_line(schema, version)).map_err(|e| Error::io(path, e))?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Replaces the file with exactly `rows`.
pub fn write_rows<R: Serialize>(path: &Path, schema: &str, version: u32, rows: &[R]) -> Result<()> {
    if path.exists() {
        fs::remove_file(path).map_err(|e| Error::io(path, e))?;
    }
    append_rows(path, schema, version, rows)
}

fn check_version(path: &Path, schema: &str, version: u32) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    let want = version_line(schema, version);
    if first.trim_end() != want {
        return Err(Error::Results(format!(
            "{}: expected version line {want:?}, found {:?}",
            path.display(),
            first.trim_end()
        )));
    }
    Ok(())
}

pub fn read_rows<R: DeserializeOwned>(path: &Path, schema: &str, version: u32) -> Result<Vec<R>> {
    check_version(path, schema, version)?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut skip = String::new();
    reader.read_line(&mut skip).map_err(|e| Error::io(path, e))?;
    let mut rest = String::new();
    reader.read_to_string(&mut rest).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(rest.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| csv_err(path, e)))
        .collect()
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    read_rows(path, RESULTS_SCHEMA, RESULTS_VERSION)
}

pub fn append_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    append_rows(path, RESULTS_SCHEMA, RESULTS_VERSION, rows)
}
