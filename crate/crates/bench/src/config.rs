//! Benchmark configuration: the experiment grid and per-method settings.
//!
//! A run is the cartesian product of sampling strategies, dimensions, target
//! shapes, and sample-size factors, replicated `replications` times per
//! cell. Settings come from an optional TOML file; command-line flags
//! override file values, and `--paper` switches from the quick desk-scale
//! grid to the full-scale study before the explicit flags are applied.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use varsamp::{AnnealingSchedule, BmcVariance, VsConfig};

/// How a batch of points is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// I.i.d. draws from the standard normal, which matches the targets'
    /// true location and scale.
    Matched,
    /// Annealed importance sampling chains from a wide Gaussian.
    Annealed,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Matched => "matched",
            Strategy::Annealed => "annealed",
        }
    }

    /// Stable tag used in seed derivation. Never renumber these.
    pub(crate) fn seed_tag(self) -> u64 {
        match self {
            Strategy::Matched => 1,
            Strategy::Annealed => 2,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "matched" => Ok(Strategy::Matched),
            "annealed" => Ok(Strategy::Annealed),
            other => bail!("unknown strategy {other:?} (expected matched or annealed)"),
        }
    }
}

/// Which estimator consumes the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Importance sampling.
    Is,
    /// Variational sampling.
    Vs,
    /// Bayesian Monte Carlo.
    Bmc,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Is => "is",
            Method::Vs => "vs",
            Method::Bmc => "bmc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "is" => Ok(Method::Is),
            "vs" => Ok(Method::Vs),
            "bmc" => Ok(Method::Bmc),
            other => bail!("unknown method {other:?} (expected is, vs, or bmc)"),
        }
    }
}

/// Annealed sampler settings (see [`AnnealingSchedule`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealSettings {
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub steps: usize,
    #[serde(rename = "proposal_var")]
    pub proposal_variance: f64,
    #[serde(rename = "init_var")]
    pub initial_variance: f64,
}

impl Default for AnnealSettings {
    fn default() -> Self {
        AnnealSettings {
            lambda_start: 1e-3,
            lambda_end: 0.999,
            steps: 200,
            proposal_variance: 0.025,
            initial_variance: 25.0,
        }
    }
}

impl AnnealSettings {
    pub fn schedule(&self) -> anyhow::Result<AnnealingSchedule> {
        AnnealingSchedule::new(
            self.lambda_start,
            self.lambda_end,
            self.steps,
            self.proposal_variance,
            self.initial_variance,
        )
        .context("invalid [anneal] settings")
    }
}

/// Newton solver settings (see [`VsConfig`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VsSettings {
    pub grad_tol: f64,
    pub max_iterations: usize,
    pub min_step: f64,
    pub hessian_jitter: f64,
}

impl Default for VsSettings {
    fn default() -> Self {
        let c = VsConfig::default();
        VsSettings {
            grad_tol: c.grad_tol,
            max_iterations: c.max_iterations,
            min_step: c.min_step,
            hessian_jitter: c.hessian_jitter,
        }
    }
}

impl VsSettings {
    pub fn solver(&self) -> VsConfig {
        VsConfig {
            grad_tol: self.grad_tol,
            max_iterations: self.max_iterations,
            min_step: self.min_step,
            hessian_jitter: self.hessian_jitter,
        }
    }
}

/// Bayesian Monte Carlo settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BmcSettings {
    /// Ridge added to the kernel matrix.
    pub damping: f64,
    /// Fixed squared-exponential kernel variance; `None` estimates it from
    /// each batch.
    pub kernel_variance: Option<f64>,
}

impl Default for BmcSettings {
    fn default() -> Self {
        BmcSettings {
            damping: 1.0,
            kernel_variance: None,
        }
    }
}

impl BmcSettings {
    pub fn variance(&self) -> BmcVariance {
        match self.kernel_variance {
            Some(v) => BmcVariance::Fixed(v),
            None => BmcVariance::Auto,
        }
    }
}

/// The full, resolved benchmark configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Target dimensions to sweep.
    pub dims: Vec<usize>,
    /// Exponential-power shapes to sweep.
    pub betas: Vec<f64>,
    /// Sample-size factors: each cell draws `factor * n_params(d)` points.
    pub factors: Vec<usize>,
    /// Independent replications per cell.
    pub replications: usize,
    /// Sampling strategies to run.
    pub strategies: Vec<Strategy>,
    /// Estimators to run on each batch.
    pub methods: Vec<Method>,
    /// Base seed; every replication derives its own stream from it.
    pub seed: u64,
    /// Output directory for records, summary, and manifest.
    pub out: PathBuf,
    /// Worker threads for replications (0 = one per core, 1 = sequential).
    pub threads: usize,
    pub anneal: AnnealSettings,
    pub vs: VsSettings,
    pub bmc: BmcSettings,
}

impl Default for RunConfig {
    /// Desk-scale defaults: small dimensions, 25 replications, a short
    /// annealing ladder. The full-scale study is [`RunConfig::paper_scale`].
    fn default() -> Self {
        RunConfig {
            dims: vec![1, 4],
            betas: vec![1.0, 2.0, 3.0],
            factors: vec![1, 2, 4, 8, 16, 32],
            replications: 25,
            strategies: vec![Strategy::Matched, Strategy::Annealed],
            methods: vec![Method::Is, Method::Vs, Method::Bmc],
            seed: 42,
            out: PathBuf::from("bench-out"),
            threads: 0,
            anneal: AnnealSettings::default(),
            vs: VsSettings::default(),
            bmc: BmcSettings::default(),
        }
    }
}

impl RunConfig {
    /// Loads a TOML configuration file over the defaults.
    pub fn from_toml_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    /// Switches to the full-scale study: ten-dimensional targets, 100
    /// replications, and the long 1000-rung annealing ladder.
    pub fn paper_scale(mut self) -> Self {
        self.dims = vec![1, 10];
        self.replications = 100;
        self.anneal.steps = 1000;
        self
    }

    /// Rejects empty or out-of-range settings before any work starts.
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.dims.is_empty()
            || self.betas.is_empty()
            || self.factors.is_empty()
            || self.strategies.is_empty()
            || self.methods.is_empty()
        {
            bail!("dims, betas, factors, strategies, and methods must all be non-empty");
        }
        if self.replications == 0 {
            bail!("replications must be at least 1");
        }
        if self.dims.iter().any(|&d| d == 0) {
            bail!("dimensions must be positive");
        }
        if self.factors.iter().any(|&k| k == 0) {
            bail!("factors must be positive");
        }
        if self.betas.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            bail!("shapes must be finite and positive");
        }
        self.anneal.schedule()?;
        Ok(())
    }
}
