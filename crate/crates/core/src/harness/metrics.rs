//! CSV metrics with a commented JSON header line carrying the resolved config.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::estimators::VarianceReport;
use crate::models::BoundEstimate;

pub const COLUMNS: [&str; 13] = [
    "step", "split", "bound", "recon", "kl_s", "kl_z", "iwae", "iwae_k", "var_theta1", "var_theta2", "var_psi",
    "var_phi", "wall_ms",
];

/// One row of a metrics file; absent values are empty cells.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub split: String,
    pub bound: Option<f64>,
    pub recon: Option<f64>,
    pub kl_s: Option<f64>,
    pub kl_z: Option<f64>,
    pub iwae: Option<f64>,
    pub iwae_k: Option<usize>,
    pub var_theta1: Option<f64>,
    pub var_theta2: Option<f64>,
    pub var_psi: Option<f64>,
    pub var_phi: Option<f64>,
    pub wall_ms: Option<u64>,
}

impl MetricsRecord {
    pub fn bound(step: u64, split: &str, est: &BoundEstimate) -> Self {
        MetricsRecord {
            step,
            split: split.to_owned(),
            bound: Some(est.total),
            recon: Some(est.term_recon),
            kl_s: Some(est.term_kl_s),
            kl_z: Some(est.term_kl_z),
            ..Default::default()
        }
    }

    pub fn variance(report: &VarianceReport) -> Self {
        MetricsRecord {
            step: report.step,
            split: "trace".into(),
            var_theta1: report.theta1,
            var_theta2: report.theta2,
            var_psi: report.psi,
            var_phi: report.phi,
            ..Default::default()
        }
    }

    /// Value of a numeric column by name.
    pub fn get(&self, column: &str) -> Option<f64> {
        match column {
            "step" => Some(self.step as f64),
            "bound" => self.bound,
            "recon" => self.recon,
            "kl_s" => self.kl_s,
            "kl_z" => self.kl_z,
            "iwae" => self.iwae,
            "iwae_k" => self.iwae_k.map(|k| k as f64),
            "var_theta1" => self.var_theta1,
            "var_theta2" => self.var_theta2,
            "var_psi" => self.var_psi,
            "var_phi" => self.var_phi,
            "wall_ms" => self.wall_ms.map(|m| m as f64),
            _ => None,
        }
    }
}

/// Appends records to a metrics file, flushing after every row.
pub struct MetricsWriter {
    path: PathBuf,
    inner: csv::Writer<File>,
}

fn io_err(path: &Path, e: impl ToString) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

impl MetricsWriter {
    /// Creates (truncating) a metrics file with the given header JSON.
    pub fn create(path: &Path, header_json: &str) -> Result<Self, HarnessError> {
        let mut file = File::create(path).map_err(|e| io_err(path, e))?;
        writeln!(file, "# {header_json}").map_err(|e| io_err(path, e))?;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        inner.write_record(COLUMNS).map_err(|e| io_err(path, e))?;
        inner.flush().map_err(|e| io_err(path, e))?;
        Ok(MetricsWriter {
            path: path.to_owned(),
            inner,
        })
    }

    /// Opens an existing metrics file for appending, or creates it.
    pub fn append(path: &Path, header_json: &str) -> Result<Self, HarnessError> {
        if !path.is_file() {
            return Self::create(path, header_json);
        }
        let file = OpenOptions::new().append(true).open(path).map_err(|e| io_err(path, e))?;
        Ok(MetricsWriter {
            path: path.to_owned(),
            inner: csv::WriterBuilder::new().has_headers(false).from_writer(file),
        })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<(), HarnessError> {
        self.inner.serialize(record).map_err(|e| io_err(&self.path, e))?;
        self.inner.flush().map_err(|e| io_err(&self.path, e))
    }
}

/// Header JSON and records of a metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsFile {
    pub header: serde_json::Value,
    pub records: Vec<MetricsRecord>,
}

pub fn read_metrics(path: &Path) -> Result<MetricsFile, HarnessError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| io_err(path, e))?;
    let header_text = first.strip_prefix("# ").ok_or_else(|| HarnessError::Metrics {
        path: path.display().to_string(),
        message: "missing `# {config}` header line".into(),
    })?;
    let header = serde_json::from_str(header_text.trim_end()).map_err(|e| HarnessError::Metrics {
        path: path.display().to_string(),
        message: format!("header is not JSON: {e}"),
    })?;
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let records = csv_reader
        .deserialize()
        .collect::<Result<Vec<MetricsRecord>, _>>()
        .map_err(|e| HarnessError::Metrics {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    Ok(MetricsFile { header, records })
}
