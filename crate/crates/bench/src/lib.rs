//! Benchmark harness for the moment estimators in `varsamp`.
//!
//! A run sweeps a grid of target dimensions, exponential-power shapes, and
//! sample-size factors; draws one batch per replication (shared by every
//! estimator); and scores each fit by its generalized KL divergence from
//! the target's true moments. Results land as per-fit records, a per-cell
//! summary, and a reproducibility manifest.
//!
//! ```
//! use varsamp_bench::{run, summarize, Method, RunConfig, Strategy};
//!
//! let mut config = RunConfig::default();
//! config.dims = vec![1];
//! config.betas = vec![2.0];
//! config.factors = vec![4];
//! config.replications = 2;
//! config.strategies = vec![Strategy::Matched];
//! config.methods = vec![Method::Is, Method::Vs];
//! config.threads = 1;
//!
//! let records = run(&config)?;
//! assert_eq!(records.len(), 2 * 2);
//! let summary = summarize(&records);
//! assert_eq!(summary.len(), 2);
//! # Ok::<(), anyhow::Error>(())
//! ```

pub mod config;
pub mod emit;
pub mod record;
pub mod runner;
pub mod summary;

pub use config::{AnnealSettings, BmcSettings, Method, RunConfig, Strategy, VsSettings};
pub use emit::{emit, EmittedPaths, Manifest, OutputFormat};
pub use record::{read_records_csv, write_records_csv, BenchRecord};
pub use runner::{cells, replication_seed, run, Cell};
pub use summary::{median, render_table, summarize, write_summary_csv, SummaryRow};

/// Keeps the guide's benchmark chapter in sync with this crate: every
/// fenced Rust block in it runs as a doctest here.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/benchmarks.md")]
    mod benchmarks {}
}
