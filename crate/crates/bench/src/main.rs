//! `bench` — runs the estimator benchmark grid and writes the results.
//!
//! Settings resolve in precedence order: built-in desk-scale defaults, then
//! an optional `--config` TOML file, then `--paper` (full-scale study),
//! then any explicit flags.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use varsamp_bench::{
    emit, render_table, run, summarize, Method, OutputFormat, RunConfig, Strategy,
};

#[derive(Parser)]
#[command(
    name = "bench",
    about = "Moment-estimation benchmark: importance sampling, variational \
             sampling, and Bayesian Monte Carlo on exponential-power targets",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the benchmark grid and write records, summary, and manifest.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file; flags below override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Full-scale study: dimensions {1, 10}, 100 replications, and a
    /// 1000-rung annealing ladder. Expect a long run.
    #[arg(long)]
    paper: bool,

    /// Target dimensions, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "D,...")]
    dims: Option<Vec<usize>>,

    /// Exponential-power shapes, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "B,...")]
    betas: Option<Vec<f64>>,

    /// Sample-size factors; each cell draws factor x n_params(d) points.
    #[arg(long, value_delimiter = ',', value_name = "K,...")]
    factors: Option<Vec<usize>>,

    /// Replications per cell.
    #[arg(long, value_name = "N")]
    reps: Option<usize>,

    /// Sampling strategies: matched, annealed.
    #[arg(long, value_delimiter = ',', value_name = "S,...")]
    strategies: Option<Vec<Strategy>>,

    /// Estimators: is, vs, bmc.
    #[arg(long, value_delimiter = ',', value_name = "M,...")]
    methods: Option<Vec<Method>>,

    /// Base seed for the replication streams.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads (0 = one per core; 1 = sequential, best for timing).
    #[arg(long)]
    threads: Option<usize>,

    /// Output format for records and summary: csv or json.
    #[arg(long, default_value = "csv")]
    format: OutputFormat,
}

impl RunArgs {
    /// Resolves the configuration: defaults, then file, then --paper, then
    /// explicit flags.
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_toml_file(path)?,
            None => RunConfig::default(),
        };
        if self.paper {
            config = config.paper_scale();
        }
        if let Some(dims) = &self.dims {
            config.dims = dims.clone();
        }
        if let Some(betas) = &self.betas {
            config.betas = betas.clone();
        }
        if let Some(factors) = &self.factors {
            config.factors = factors.clone();
        }
        if let Some(reps) = self.reps {
            config.replications = reps;
        }
        if let Some(strategies) = &self.strategies {
            config.strategies = strategies.clone();
        }
        if let Some(methods) = &self.methods {
            config.methods = methods.clone();
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        if let Some(threads) = self.threads {
            config.threads = threads;
        }
        config.validate()?;
        Ok(config)
    }
}

fn run_command(args: &RunArgs) -> anyhow::Result<()> {
    let config = args.resolve()?;
    let records = run(&config).context("benchmark run failed")?;
    let rows = summarize(&records);
    let paths = emit(&config, &records, &rows, args.format)?;

    print!("{}", render_table(&rows));
    println!();
    println!("records:  {}", paths.records.display());
    println!("summary:  {}", paths.summary.display());
    println!("manifest: {}", paths.manifest.display());
    if !args.paper {
        println!(
            "note: desk-scale run (dims {:?}, {} replications); pass --paper \
             for the full-scale study",
            config.dims, config.replications
        );
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(args) => run_command(args),
    }
}
