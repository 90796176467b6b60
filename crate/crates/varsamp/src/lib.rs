//! Gaussian moment estimation for unnormalized densities.
//!
//! Given a target density `p` on `R^d` that can only be evaluated pointwise
//! (and not necessarily normalized), this crate estimates its mass, mean,
//! and covariance — equivalently, fits an unnormalized Gaussian
//! `q(x) = Z N(x; mu, Sigma)` — from a single batch of weighted Monte Carlo
//! points. Three estimators share that batch:
//!
//! * **Importance sampling** ([`is_fit`]): moments of the weighted point
//!   cloud. Cheap, unbiased, noisy.
//! * **Variational sampling** ([`vs_fit`]): Newton minimization of a sampled
//!   generalized Kullback-Leibler divergence over the Gaussian exponential
//!   family. Convex, and *exact* (to solver tolerance) whenever the target
//!   itself is Gaussian, with errors that shrink as the family gets closer
//!   to the target.
//! * **Bayesian Monte Carlo** ([`bmc_fit`]): Gaussian-process quadrature of
//!   the target values.
//!
//! Batches come from [`matched_sample`] (i.i.d. draws from a known Gaussian
//! instrumental) or [`annealed_sample`] (annealed importance sampling chains
//! from a wide Gaussian, for targets with no obvious instrumental). Fits are
//! compared with [`generalized_kl`], the divergence the variational
//! estimator minimizes.
//!
//! ```
//! use varsamp::{
//!     generalized_kl, is_fit, matched_sample, vs_fit, ExpPowerTarget, FeatureMap,
//!     GaussianMoments, VsConfig,
//! };
//!
//! // A unit-variance Laplace target, sampled through a standard normal.
//! let target = ExpPowerTarget::new(1, 1.0)?;
//! let instrumental = GaussianMoments::standard_normal(1);
//! let batch = matched_sample(&target, &instrumental, 256, 7)?;
//!
//! let fm = FeatureMap::new(1);
//! let is = is_fit(&batch, &fm)?;
//! let vs = vs_fit(&batch, &fm, &VsConfig::default())?;
//!
//! // Both estimates are proper here; score them against the true moments.
//! let truth = GaussianMoments::standard_normal(1);
//! let err_is = generalized_kl(&truth, is.moments.proper().unwrap());
//! let err_vs = generalized_kl(&truth, vs.moments.proper().unwrap());
//! assert!(err_is.is_finite() && err_vs.is_finite());
//! # Ok::<(), varsamp::Error>(())
//! ```
//!
//! Everything is deterministic given a seed: samplers use one counter-based
//! generator per batch (and per chain, for annealed batches), so results are
//! reproducible across runs and across machines.

mod error;
mod estimators;
mod family;
mod sampling;
mod targets;

pub use error::{Error, Result};
pub use estimators::{
    bmc_fit, is_fit, is_variance, rank_of_features, vs_asymptotic_variance, vs_fit, vs_objective,
    BmcVariance, FitResult, VsConfig, VsObjective,
};
pub use family::{
    feature_integrals, generalized_kl, moments_to_natural, natural_to_moments, FeatureMap,
    GaussianDensity, GaussianMoments, MomentsOutcome, NaturalParams,
};
pub use sampling::{annealed_sample, matched_sample, AnnealingSchedule, SampleBatch};
pub use targets::{log_density_at, ExpPowerTarget, GaussianTarget, TargetDensity};

/// Keeps the guide's code in sync with the crate: every fenced Rust block in
/// the book chapters runs as a doctest of this crate.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(targets, "../../../book/src/targets.md");
    chapter!(gaussian_family, "../../../book/src/gaussian-family.md");
    chapter!(sampling, "../../../book/src/sampling.md");
    chapter!(estimators, "../../../book/src/estimators.md");
    chapter!(diagnostics, "../../../book/src/diagnostics.md");
}
