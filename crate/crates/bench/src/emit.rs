//! Output emission: records, summary, and a run manifest.
//!
//! The manifest captures everything needed to reproduce or audit a run —
//! the resolved configuration, the expanded grid with per-cell batch sizes,
//! and the record count — and deliberately contains no timestamps or host
//! details, so identical configurations produce byte-identical manifests.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Strategy};
use crate::record::{write_records_csv, BenchRecord};
use crate::runner::{cells, Cell};
use crate::summary::{write_summary_csv, SummaryRow};

/// On-disk format for records and summary. The manifest is always JSON.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OutputFormat {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => bail!("unknown format {other:?} (expected csv or json)"),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestCell {
    strategy: Strategy,
    d: usize,
    beta: f64,
    k: usize,
    n_samples: usize,
}

impl From<&Cell> for ManifestCell {
    fn from(cell: &Cell) -> Self {
        ManifestCell {
            strategy: cell.strategy,
            d: cell.d,
            beta: cell.beta,
            k: cell.k,
            n_samples: cell.n_samples,
        }
    }
}

/// Reproducibility sidecar written next to the data files.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    /// Names of the target densities in the grid.
    targets: Vec<String>,
    /// Expanded grid with resolved batch sizes.
    cells: Vec<ManifestCell>,
    /// Records written, across all cells, replications, and methods.
    record_count: usize,
    /// The resolved configuration the run used. The output path is cleared:
    /// it does not affect results, and omitting it keeps manifests from
    /// identical experiments byte-identical wherever they were written.
    config: RunConfig,
}

impl Manifest {
    pub fn new(config: &RunConfig, record_count: usize) -> Self {
        let mut config = config.clone();
        config.out = PathBuf::new();
        Manifest {
            targets: config
                .betas
                .iter()
                .map(|beta| format!("exp_power:beta={beta}"))
                .collect(),
            cells: cells(&config).iter().map(ManifestCell::from).collect(),
            record_count,
            config,
        }
    }
}

/// Paths of the files a run produced.
#[derive(Debug)]
pub struct EmittedPaths {
    pub records: PathBuf,
    pub summary: PathBuf,
    pub manifest: PathBuf,
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("creating {}", path.display())
    })?))
}

/// Writes records, summary, and manifest into `config.out`, creating the
/// directory if needed.
pub fn emit(
    config: &RunConfig,
    records: &[BenchRecord],
    rows: &[SummaryRow],
    format: OutputFormat,
) -> anyhow::Result<EmittedPaths> {
    let dir = &config.out;
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;

    let (records_path, summary_path) = match format {
        OutputFormat::Csv => {
            let records_path = dir.join("records.csv");
            write_records_csv(create(&records_path)?, records)?;
            let summary_path = dir.join("summary.csv");
            write_summary_csv(create(&summary_path)?, rows)?;
            (records_path, summary_path)
        }
        OutputFormat::Json => {
            let records_path = dir.join("records.json");
            let mut w = create(&records_path)?;
            serde_json::to_writer_pretty(&mut w, records)?;
            w.write_all(b"\n")?;
            w.flush()?;
            let summary_path = dir.join("summary.json");
            let mut w = create(&summary_path)?;
            serde_json::to_writer_pretty(&mut w, rows)?;
            w.write_all(b"\n")?;
            w.flush()?;
            (records_path, summary_path)
        }
    };

    let manifest_path = dir.join("manifest.json");
    let manifest = Manifest::new(config, records.len());
    let mut w = create(&manifest_path)?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;

    Ok(EmittedPaths {
        records: records_path,
        summary: summary_path,
        manifest: manifest_path,
    })
}
