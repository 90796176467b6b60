//! Experiment execution: expands the configuration into cells, draws one
//! batch per replication, runs every estimator on it, and scores the fits.
//!
//! Determinism contract: with a fixed configuration, everything except the
//! wall-clock columns (`fit_seconds`, `sampling_seconds`) is identical from
//! run to run and independent of the thread count. Each replication's seed
//! is derived from the base seed and the cell coordinates — but not the
//! method, so every estimator in a replication sees the same batch.

use anyhow::Context;
use rayon::prelude::*;
use varsamp::{
    annealed_sample, bmc_fit, generalized_kl, is_fit, matched_sample, vs_fit, ExpPowerTarget,
    FeatureMap, FitResult, GaussianMoments, MomentsOutcome, SampleBatch, TargetDensity,
};

use crate::config::{Method, RunConfig, Strategy};
use crate::record::BenchRecord;

/// One point of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub d: usize,
    pub beta: f64,
    pub k: usize,
    /// Resolved batch size: `k * n_params(d)`.
    pub n_samples: usize,
    pub strategy: Strategy,
}

/// Expands the configuration into cells in a fixed order:
/// strategy, then dimension, then shape, then factor.
pub fn cells(config: &RunConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &strategy in &config.strategies {
        for &d in &config.dims {
            let n_params = FeatureMap::new(d).n_params();
            for &beta in &config.betas {
                for &k in &config.factors {
                    out.push(Cell {
                        d,
                        beta,
                        k,
                        n_samples: k * n_params,
                        strategy,
                    });
                }
            }
        }
    }
    out
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed for one replication's batch by hashing the base seed
/// with the cell coordinates and the replication index.
pub fn replication_seed(base: u64, cell: &Cell, replication: usize) -> u64 {
    let mut h = splitmix64(base);
    for v in [
        cell.d as u64,
        cell.beta.to_bits(),
        cell.k as u64,
        cell.strategy.seed_tag(),
        replication as u64,
    ] {
        h = splitmix64(h ^ v);
    }
    h
}

/// Generalized KL divergence from the target's true moments to the fit;
/// infinite when the fit is improper.
fn score(reference: &GaussianMoments, fit: &FitResult) -> f64 {
    match &fit.moments {
        MomentsOutcome::Proper(moments) => generalized_kl(reference, moments),
        MomentsOutcome::Improper => f64::INFINITY,
    }
}

fn fit_record(
    cell: &Cell,
    replication: usize,
    method: Method,
    reference: &GaussianMoments,
    sampling_seconds: f64,
    fit: FitResult,
) -> BenchRecord {
    let epsilon = score(reference, &fit);
    let mut diagnostics = fit.diagnostics;
    if let Some(iterations) = fit.iterations {
        diagnostics.insert("iterations".to_string(), iterations as f64);
    }
    BenchRecord {
        method,
        d: cell.d,
        beta: cell.beta,
        k: cell.k,
        n_samples: cell.n_samples,
        strategy: cell.strategy,
        replication,
        epsilon,
        fit_seconds: fit.fit_seconds,
        sampling_seconds,
        improper: !matches!(fit.moments, MomentsOutcome::Proper(_)),
        diagnostics,
    }
}

/// Record for a method (or its batch) that failed outright: scored as an
/// improper fit with an `error` flag, so one bad replication never aborts
/// a cell.
fn error_record(
    cell: &Cell,
    replication: usize,
    method: Method,
    sampling_seconds: f64,
) -> BenchRecord {
    let mut diagnostics = std::collections::BTreeMap::new();
    diagnostics.insert("error".to_string(), 1.0);
    BenchRecord {
        method,
        d: cell.d,
        beta: cell.beta,
        k: cell.k,
        n_samples: cell.n_samples,
        strategy: cell.strategy,
        replication,
        epsilon: f64::INFINITY,
        fit_seconds: 0.0,
        sampling_seconds,
        improper: true,
        diagnostics,
    }
}

fn draw_batch(
    config: &RunConfig,
    cell: &Cell,
    target: &ExpPowerTarget,
    seed: u64,
) -> varsamp::Result<SampleBatch> {
    match cell.strategy {
        Strategy::Matched => {
            let instrumental = GaussianMoments::standard_normal(cell.d);
            matched_sample(target, &instrumental, cell.n_samples, seed)
        }
        Strategy::Annealed => {
            let schedule = config
                .anneal
                .schedule()
                .expect("validated before the run started");
            annealed_sample(target, &schedule, cell.n_samples, seed)
        }
    }
}

/// Runs every configured method on one replication's batch.
fn run_replication(config: &RunConfig, cell: &Cell, replication: usize) -> Vec<BenchRecord> {
    let target = ExpPowerTarget::new(cell.d, cell.beta).expect("validated shape");
    let reference = target
        .reference_moments()
        .expect("exponential-power targets have closed-form moments");
    let seed = replication_seed(config.seed, cell, replication);

    let batch = match draw_batch(config, cell, &target, seed) {
        Ok(batch) => batch,
        Err(_) => {
            // The sampler itself failed (e.g. every initial draw landed
            // outside the target's support): every method gets an error row.
            return config
                .methods
                .iter()
                .map(|&method| error_record(cell, replication, method, 0.0))
                .collect();
        }
    };

    let fm = FeatureMap::new(cell.d);
    let sampling_seconds = batch.sampling_seconds();
    config
        .methods
        .iter()
        .map(|&method| {
            let fit = match method {
                Method::Is => is_fit(&batch, &fm),
                Method::Vs => vs_fit(&batch, &fm, &config.vs.solver()),
                Method::Bmc => bmc_fit(&batch, config.bmc.variance(), config.bmc.damping),
            };
            match fit {
                Ok(fit) => fit_record(cell, replication, method, &reference, sampling_seconds, fit),
                Err(_) => error_record(cell, replication, method, sampling_seconds),
            }
        })
        .collect()
}

/// Runs the whole grid and returns the records in deterministic order:
/// cells in [`cells`] order, replications in index order, methods in
/// configuration order.
pub fn run(config: &RunConfig) -> anyhow::Result<Vec<BenchRecord>> {
    config.validate()?;
    let grid = cells(config);
    let mut records = Vec::with_capacity(grid.len() * config.replications * config.methods.len());

    if config.threads == 1 {
        // Sequential path: no pool, no task overhead, trustworthy timings.
        for cell in &grid {
            for replication in 0..config.replications {
                records.extend(run_replication(config, cell, replication));
            }
        }
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .context("building worker pool")?;
        for cell in &grid {
            let per_rep: Vec<Vec<BenchRecord>> = pool.install(|| {
                (0..config.replications)
                    .into_par_iter()
                    .map(|replication| run_replication(config, cell, replication))
                    .collect()
            });
            records.extend(per_rep.into_iter().flatten());
        }
    }
    Ok(records)
}
