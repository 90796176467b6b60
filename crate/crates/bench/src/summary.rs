//! Per-cell aggregation of benchmark records.
//!
//! Each summary row covers one (strategy, dimension, shape, factor, method)
//! cell: the median divergence across replications (improper fits
//! participate as `+inf`, so a cell where most fits fail has an infinite
//! median), the improper fraction, and wall-clock cost both as a per-fit
//! median and as a total relative to importance sampling on the same batch.

use serde::{Deserialize, Serialize};

use crate::config::{Method, Strategy};
use crate::record::BenchRecord;

/// Aggregates for one cell of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub d: usize,
    pub beta: f64,
    pub k: usize,
    pub n_samples: usize,
    pub strategy: Strategy,
    /// Number of replications aggregated.
    pub replications: usize,
    /// Median divergence; infinite fits sort above every finite value.
    pub median_epsilon: f64,
    /// Fraction of replications whose fit was improper.
    pub improper_fraction: f64,
    /// Median per-replication estimator time.
    pub median_fit_seconds: f64,
    /// Total estimator plus sampling time across replications.
    pub total_seconds: f64,
    /// `total_seconds` relative to importance sampling on the same cell;
    /// empty when importance sampling did not run there.
    pub total_vs_is: Option<f64>,
}

/// Median with infinities participating: values are sorted (there are no
/// NaNs in benchmark output) and an even count averages the two middle
/// values, so any infinite middle value makes the median infinite.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of no values");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("benchmark values are never NaN"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

#[derive(PartialEq, Clone, Copy)]
struct CellKey {
    strategy: Strategy,
    d: usize,
    beta: f64,
    k: usize,
    method: Method,
}

/// Summarizes records into one row per cell, preserving the order in which
/// cells first appear in the record stream.
pub fn summarize(records: &[BenchRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<CellKey> = Vec::new();
    let mut groups: Vec<Vec<&BenchRecord>> = Vec::new();
    for record in records {
        let key = CellKey {
            strategy: record.strategy,
            d: record.d,
            beta: record.beta,
            k: record.k,
            method: record.method,
        };
        match keys.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(record),
            None => {
                keys.push(key);
                groups.push(vec![record]);
            }
        }
    }

    let mut rows: Vec<SummaryRow> = keys
        .iter()
        .zip(&groups)
        .map(|(key, group)| {
            let epsilons: Vec<f64> = group.iter().map(|r| r.epsilon).collect();
            let fit_times: Vec<f64> = group.iter().map(|r| r.fit_seconds).collect();
            let improper = group.iter().filter(|r| r.improper).count();
            let total: f64 = group
                .iter()
                .map(|r| r.fit_seconds + r.sampling_seconds)
                .sum();
            SummaryRow {
                method: key.method,
                d: key.d,
                beta: key.beta,
                k: key.k,
                n_samples: group[0].n_samples,
                strategy: key.strategy,
                replications: group.len(),
                median_epsilon: median(&epsilons),
                improper_fraction: improper as f64 / group.len() as f64,
                median_fit_seconds: median(&fit_times),
                total_seconds: total,
                total_vs_is: None,
            }
        })
        .collect();

    // Second pass: cost of each method relative to importance sampling on
    // the identical batches.
    let is_totals: Vec<(CellKey, f64)> = rows
        .iter()
        .filter(|row| row.method == Method::Is)
        .map(|row| {
            (
                CellKey {
                    strategy: row.strategy,
                    d: row.d,
                    beta: row.beta,
                    k: row.k,
                    method: Method::Is,
                },
                row.total_seconds,
            )
        })
        .collect();
    for row in &mut rows {
        let key = CellKey {
            strategy: row.strategy,
            d: row.d,
            beta: row.beta,
            k: row.k,
            method: Method::Is,
        };
        row.total_vs_is = is_totals
            .iter()
            .find(|(k, _)| *k == key)
            .and_then(|(_, is_total)| (*is_total > 0.0).then(|| row.total_seconds / is_total));
    }
    rows
}

/// Writes summary rows as CSV with a header row.
pub fn write_summary_csv<W: std::io::Write>(
    writer: W,
    rows: &[SummaryRow],
) -> anyhow::Result<()> {
    let mut csv_writer = csv::Writer::from_writer(writer);
    for row in rows {
        csv_writer.serialize(row)?;
    }
    csv_writer.flush()?;
    Ok(())
}

/// Renders the summary as an aligned text table for the terminal.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<8} {:<9} {:>3} {:>5} {:>3} {:>6} {:>12} {:>9} {:>12} {:>9}\n",
        "method", "strategy", "d", "beta", "k", "n", "median_eps", "improper", "med_fit_s", "vs_is"
    ));
    for row in rows {
        let ratio = row
            .total_vs_is
            .map(|r| format!("{r:.2}"))
            .unwrap_or_else(|| "-".to_string());
        out.push_str(&format!(
            "{:<8} {:<9} {:>3} {:>5} {:>3} {:>6} {:>12.4e} {:>9.2} {:>12.3e} {:>9}\n",
            row.method.as_str(),
            row.strategy.as_str(),
            row.d,
            row.beta,
            row.k,
            row.n_samples,
            row.median_epsilon,
            row.improper_fraction,
            row.median_fit_seconds,
            ratio
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn record(
        method: Method,
        k: usize,
        replication: usize,
        epsilon: f64,
        fit_seconds: f64,
    ) -> BenchRecord {
        BenchRecord {
            method,
            d: 1,
            beta: 2.0,
            k,
            n_samples: 3 * k,
            strategy: Strategy::Matched,
            replication,
            epsilon,
            fit_seconds,
            sampling_seconds: 0.5,
            improper: epsilon.is_infinite(),
            diagnostics: BTreeMap::new(),
        }
    }

    #[test]
    fn median_handles_odd_even_and_infinite() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[1.0, f64::INFINITY, 2.0]), 2.0);
        assert!(median(&[1.0, f64::INFINITY, f64::INFINITY]).is_infinite());
        assert!(median(&[1.0, f64::INFINITY]).is_infinite());
    }

    #[test]
    fn summarize_groups_and_aggregates() {
        let records = vec![
            record(Method::Is, 1, 0, 0.4, 0.1),
            record(Method::Vs, 1, 0, 0.04, 0.3),
            record(Method::Is, 1, 1, 0.2, 0.1),
            record(Method::Vs, 1, 1, f64::INFINITY, 0.3),
            record(Method::Is, 1, 2, 0.3, 0.1),
            record(Method::Vs, 1, 2, 0.02, 0.3),
        ];
        let rows = summarize(&records);
        assert_eq!(rows.len(), 2);
        let is_row = &rows[0];
        assert_eq!(is_row.method, Method::Is);
        assert_eq!(is_row.replications, 3);
        assert_eq!(is_row.median_epsilon, 0.3);
        assert_eq!(is_row.improper_fraction, 0.0);
        assert_eq!(is_row.median_fit_seconds, 0.1);
        assert!((is_row.total_seconds - 1.8).abs() < 1e-12);
        assert_eq!(is_row.total_vs_is, Some(1.0));
        let vs_row = &rows[1];
        assert_eq!(vs_row.median_epsilon, 0.04);
        assert!((vs_row.improper_fraction - 1.0 / 3.0).abs() < 1e-12);
        assert!((vs_row.total_seconds - 2.4).abs() < 1e-12);
        let ratio = vs_row.total_vs_is.unwrap();
        assert!((ratio - 2.4 / 1.8).abs() < 1e-12);
    }

    #[test]
    fn ratio_is_empty_without_importance_sampling() {
        let records = vec![
            record(Method::Vs, 1, 0, 0.1, 0.3),
            record(Method::Vs, 1, 1, 0.2, 0.3),
        ];
        let rows = summarize(&records);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].total_vs_is, None);
    }

    #[test]
    fn improper_majority_gives_infinite_median() {
        let records = vec![
            record(Method::Bmc, 1, 0, f64::INFINITY, 0.1),
            record(Method::Bmc, 1, 1, f64::INFINITY, 0.1),
            record(Method::Bmc, 1, 2, 0.5, 0.1),
        ];
        let rows = summarize(&records);
        assert!(rows[0].median_epsilon.is_infinite());
        assert!((rows[0].improper_fraction - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn summary_csv_has_empty_ratio_and_inf_median() {
        let records = vec![
            record(Method::Vs, 1, 0, f64::INFINITY, 0.3),
            record(Method::Vs, 1, 1, f64::INFINITY, 0.3),
        ];
        let rows = summarize(&records);
        let mut buffer = Vec::new();
        write_summary_csv(&mut buffer, &rows).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,d,beta,k,n_samples,strategy,replications,median_epsilon,\
             improper_fraction,median_fit_seconds,total_seconds,total_vs_is"
        );
        let data = lines.next().unwrap();
        assert!(data.contains(",inf,"), "{data}");
        assert!(data.ends_with(','), "empty trailing ratio field: {data}");
    }

    #[test]
    fn table_renders_one_line_per_row() {
        let records = vec![
            record(Method::Is, 1, 0, 0.4, 0.1),
            record(Method::Vs, 1, 0, 0.04, 0.3),
        ];
        let rows = summarize(&records);
        let table = render_table(&rows);
        assert_eq!(table.lines().count(), 3);
        assert!(table.contains("median_eps"));
        assert!(table.contains("vs"));
    }
}
