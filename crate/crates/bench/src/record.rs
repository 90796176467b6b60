//! One record per (cell, replication, method) fit, and its CSV encoding.

use std::collections::BTreeMap;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::config::{Method, Strategy};

/// The outcome of running one estimator on one replication's batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: Method,
    /// Target dimension.
    pub d: usize,
    /// Exponential-power shape of the target.
    pub beta: f64,
    /// Sample-size factor; the batch holds `k * n_params(d)` points.
    pub k: usize,
    /// Resolved batch size.
    pub n_samples: usize,
    pub strategy: Strategy,
    /// Replication index within the cell, starting at 0.
    pub replication: usize,
    /// Generalized KL divergence from the true moments to the fit;
    /// infinite when the fit is improper.
    pub epsilon: f64,
    /// Wall-clock seconds spent inside the estimator.
    pub fit_seconds: f64,
    /// Wall-clock seconds spent drawing the batch.
    pub sampling_seconds: f64,
    /// Whether the fit failed to produce proper moments.
    pub improper: bool,
    /// Estimator diagnostics (iteration counts, condition numbers, flags).
    pub diagnostics: BTreeMap<String, f64>,
}

/// Flat CSV row. The diagnostics map rides along as a JSON object in the
/// last column so the schema stays fixed across methods.
#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    method: Method,
    d: usize,
    beta: f64,
    k: usize,
    n_samples: usize,
    strategy: Strategy,
    replication: usize,
    epsilon: f64,
    fit_seconds: f64,
    sampling_seconds: f64,
    improper: bool,
    diagnostics: String,
}

impl BenchRecord {
    fn to_row(&self) -> anyhow::Result<CsvRow> {
        Ok(CsvRow {
            method: self.method,
            d: self.d,
            beta: self.beta,
            k: self.k,
            n_samples: self.n_samples,
            strategy: self.strategy,
            replication: self.replication,
            epsilon: self.epsilon,
            fit_seconds: self.fit_seconds,
            sampling_seconds: self.sampling_seconds,
            improper: self.improper,
            diagnostics: serde_json::to_string(&self.diagnostics)
                .context("encoding diagnostics")?,
        })
    }

    fn from_row(row: CsvRow) -> anyhow::Result<Self> {
        Ok(BenchRecord {
            method: row.method,
            d: row.d,
            beta: row.beta,
            k: row.k,
            n_samples: row.n_samples,
            strategy: row.strategy,
            replication: row.replication,
            epsilon: row.epsilon,
            fit_seconds: row.fit_seconds,
            sampling_seconds: row.sampling_seconds,
            improper: row.improper,
            diagnostics: serde_json::from_str(&row.diagnostics)
                .context("decoding diagnostics")?,
        })
    }
}

/// Writes records as CSV with a header row.
pub fn write_records_csv<W: std::io::Write>(
    writer: W,
    records: &[BenchRecord],
) -> anyhow::Result<()> {
    let mut csv_writer = csv::Writer::from_writer(writer);
    for record in records {
        csv_writer.serialize(record.to_row()?)?;
    }
    csv_writer.flush()?;
    Ok(())
}

/// Reads records back from CSV produced by [`write_records_csv`].
pub fn read_records_csv<R: std::io::Read>(reader: R) -> anyhow::Result<Vec<BenchRecord>> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let mut records = Vec::new();
    for row in csv_reader.deserialize::<CsvRow>() {
        records.push(BenchRecord::from_row(row?)?);
    }
    Ok(records)
}
