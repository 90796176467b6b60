//! Moment estimators: importance sampling, variational fitting, and
//! Bayesian quadrature.
//!
//! All three consume the same [`SampleBatch`](crate::SampleBatch) and return
//! the same [`FitResult`], so a benchmark can price them against each other
//! on identical draws. They differ in how they spend the batch:
//!
//! * [`is_fit`] reweighs the points and reads the moments off the weighted
//!   empirical distribution — a closed-form baseline.
//! * [`vs_fit`] minimizes a Monte Carlo estimate of the generalized
//!   Kullback-Leibler divergence from the target to a Gaussian exponential
//!   family, by Newton's method. The objective is convex in the natural
//!   parameters, and when the feature matrix has full rank the minimizer is
//!   unique.
//! * [`bmc_fit`] treats the target values as observations of a Gaussian
//!   process and integrates the posterior mean in closed form.

mod bayes_quad;
mod importance;
mod variational;

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::family::{FeatureMap, MomentsOutcome, NaturalParams};
use crate::sampling::SampleBatch;

pub use bayes_quad::{bmc_fit, BmcVariance};
pub use importance::{is_fit, is_variance};
pub use variational::{vs_asymptotic_variance, vs_fit, vs_objective, VsConfig, VsObjective};

/// Relative singular-value threshold below which a feature direction counts
/// as numerically absent.
const RANK_TOL: f64 = 1e-10;

/// What an estimator produced: the fitted moments (or the `Improper`
/// marker), timing, and per-method diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// The fitted unnormalized Gaussian, or `Improper` when the estimate is
    /// not a normalizable density.
    pub moments: MomentsOutcome,
    /// Natural parameters of the fit when available. For the variational
    /// method this is the minimizer itself and is present even when the
    /// moment form is improper.
    pub natural: Option<NaturalParams>,
    /// Newton iterations actually taken, for iterative methods.
    pub iterations: Option<usize>,
    /// Wall-clock seconds spent inside the estimator.
    pub fit_seconds: f64,
    /// Method-specific scalar diagnostics, keyed by stable names. Values are
    /// always finite.
    pub diagnostics: BTreeMap<String, f64>,
}

impl FitResult {
    fn new(moments: MomentsOutcome) -> Self {
        FitResult {
            moments,
            natural: None,
            iterations: None,
            fit_seconds: 0.0,
            diagnostics: BTreeMap::new(),
        }
    }

    fn insert_diag(&mut self, key: &str, value: f64) {
        debug_assert!(value.is_finite(), "diagnostic {key} must be finite");
        self.diagnostics.insert(key.to_string(), value);
    }
}

/// Numerical rank of the feature matrix `Phi = [phi(x_1) .. phi(x_N)]`,
/// counting singular values above `1e-10` of the largest.
///
/// A full-rank feature matrix (`rank == fm.n_params()`) is exactly the
/// condition under which the variational objective is strictly convex and
/// has a unique minimizer.
pub fn rank_of_features(batch: &SampleBatch, fm: &FeatureMap) -> Result<usize> {
    let phi = fm.feature_matrix(batch.points())?;
    if !phi.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument(
            "feature matrix has non-finite entries".into(),
        ));
    }
    Ok(matrix_rank(&phi))
}

pub(crate) fn matrix_rank(m: &DMatrix<f64>) -> usize {
    let svd = m.clone().svd(false, false);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    if max_sv <= 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > RANK_TOL * max_sv)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn batch_from_points(points: &[f64]) -> SampleBatch {
        let n = points.len();
        SampleBatch::from_parts(
            DMatrix::from_row_slice(1, n, points),
            DVector::zeros(n),
            DVector::zeros(n),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn three_distinct_points_span_the_quadratic_family_on_the_line() {
        let fm = FeatureMap::new(1);
        let full = batch_from_points(&[-1.0, 0.0, 1.0]);
        assert_eq!(rank_of_features(&full, &fm).unwrap(), 3);
        let short = batch_from_points(&[-1.0, 1.0]);
        assert_eq!(rank_of_features(&short, &fm).unwrap(), 2);
        let repeated = batch_from_points(&[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(rank_of_features(&repeated, &fm).unwrap(), 1);
    }
}
