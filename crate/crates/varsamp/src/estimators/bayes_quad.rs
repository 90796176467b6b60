//! Bayesian Monte Carlo: Gaussian-process quadrature of the target.
//!
//! The target values `y_k = p(x_k)` are modeled as a Gaussian process with
//! squared-exponential kernel `k(x, x') = exp(-||x - x'||^2 / (2v))`. The
//! posterior mean of `p` is then a kernel expansion whose integrals against
//! `1`, `x`, and `x x'` are available in closed form, giving mass, mean, and
//! covariance estimates in one linear solve:
//!
//! ```text
//! a = (K + damping I)^-1 y,       c_k = a_k (2 pi v)^(d/2),
//! Z = sum c_k,   mu = sum c_k x_k / Z,
//! Sigma = sum c_k [ (x_k - mu)(x_k - mu)' + v I ] / Z.
//! ```
//!
//! Unlike the other estimators this one ignores the importance weights: only
//! the point locations and the target values enter. Its weakness is the
//! kernel system itself — as points crowd together `K + damping I` becomes
//! ill-conditioned, the expansion coefficients `c_k` oscillate in sign, and
//! the implied "covariance" can stop being positive definite. Those outcomes
//! are reported as `Improper` rather than patched over.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::{moments_to_natural, FeatureMap, GaussianMoments, MomentsOutcome};
use crate::sampling::SampleBatch;

use super::{is_fit, FitResult};

/// Iterations of the power method used for the condition-number diagnostic.
const CONDITION_ITERATIONS: usize = 40;

/// Choice of the squared-exponential kernel variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BmcVariance {
    /// Estimate `v` from the batch: the mean per-coordinate variance of the
    /// importance sampling fit, falling back to the unweighted sample
    /// variance of the points, then to `1.0`.
    Auto,
    /// Use a fixed `v > 0`.
    Fixed(f64),
}

/// Fits an unnormalized Gaussian by Gaussian-process quadrature.
///
/// `damping` is the ridge added to the kernel matrix (the observation-noise
/// variance of the process); it must be nonnegative.
///
/// Diagnostics: `kernel_variance`, `kernel_condition` (a power-method
/// estimate of the condition number of `K + damping I`), and when relevant
/// `kernel_variance_fallback`, `kernel_solve_failed`, `nonpositive_mass`,
/// `target_overflow`.
pub fn bmc_fit(batch: &SampleBatch, variance: BmcVariance, damping: f64) -> Result<FitResult> {
    if !(damping.is_finite() && damping >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "damping must be finite and nonnegative, got {damping}"
        )));
    }
    if let BmcVariance::Fixed(v) = variance {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kernel variance must be finite and positive, got {v}"
            )));
        }
    }
    let start = Instant::now();
    let n = batch.n_points();
    let d = batch.dim();

    let mut result = FitResult::new(MomentsOutcome::Improper);
    result.iterations = None;

    let (v, fallback) = match variance {
        BmcVariance::Fixed(v) => (v, false),
        BmcVariance::Auto => auto_variance(batch),
    };
    result.insert_diag("kernel_variance", v);
    if fallback {
        result.insert_diag("kernel_variance_fallback", 1.0);
    }

    let y = DVector::from_fn(n, |k, _| batch.log_target()[k].exp());
    if !y.iter().all(|t| t.is_finite()) {
        result.insert_diag("target_overflow", 1.0);
        result.fit_seconds = start.elapsed().as_secs_f64();
        return Ok(result);
    }

    let mut kernel = DMatrix::zeros(n, n);
    for j in 0..n {
        kernel[(j, j)] = 1.0 + damping;
        for k in (j + 1)..n {
            let diff = batch.points().column(j) - batch.points().column(k);
            let val = (-diff.norm_squared() / (2.0 * v)).exp();
            kernel[(j, k)] = val;
            kernel[(k, j)] = val;
        }
    }

    let Some(chol) = Cholesky::new(kernel.clone()) else {
        result.insert_diag("kernel_solve_failed", 1.0);
        result.fit_seconds = start.elapsed().as_secs_f64();
        return Ok(result);
    };
    result.insert_diag("kernel_condition", condition_estimate(&kernel, &chol));

    let a = chol.solve(&y);
    let scale = (2.0 * PI * v).powf(d as f64 / 2.0);
    let c = a * scale;

    let mass: f64 = c.sum();
    if !(mass.is_finite() && mass > 0.0) {
        result.insert_diag("nonpositive_mass", 1.0);
        result.fit_seconds = start.elapsed().as_secs_f64();
        return Ok(result);
    }

    let mut mean = DVector::zeros(d);
    for k in 0..n {
        mean.axpy(c[k], &batch.points().column(k).into_owned(), 1.0);
    }
    mean /= mass;
    let mut cov = DMatrix::identity(d, d) * v;
    for k in 0..n {
        let diff = batch.points().column(k) - &mean;
        cov.ger(c[k] / mass, &diff, &diff, 1.0);
    }
    let cov = 0.5 * (&cov + cov.transpose());

    match GaussianMoments::new(mass, mean, cov) {
        Ok(m) => {
            result.natural = moments_to_natural(&FeatureMap::new(d), &m).ok();
            result.moments = MomentsOutcome::Proper(m);
        }
        Err(_) => result.moments = MomentsOutcome::Improper,
    }
    result.fit_seconds = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Kernel variance from the batch: importance-fit covariance trace over `d`,
/// else unweighted point variance, else `1.0`. Returns `(v, used_fallback)`.
fn auto_variance(batch: &SampleBatch) -> (f64, bool) {
    let d = batch.dim();
    let fm = FeatureMap::new(d);
    if let Ok(fit) = is_fit(batch, &fm) {
        if let Some(m) = fit.moments.proper() {
            let v = m.cov().trace() / d as f64;
            if v.is_finite() && v > 0.0 {
                return (v, false);
            }
        }
    }
    let n = batch.n_points();
    let mut mean = DVector::zeros(d);
    for k in 0..n {
        mean += batch.points().column(k);
    }
    mean /= n as f64;
    let mut total = 0.0;
    for k in 0..n {
        total += (batch.points().column(k) - &mean).norm_squared();
    }
    let v = total / (n as f64 * d as f64);
    if v.is_finite() && v > 0.0 {
        (v, false)
    } else {
        (1.0, true)
    }
}

/// Power-method estimate of `cond(M) = lambda_max / lambda_min` for a
/// symmetric positive definite `M` with known Cholesky factorization.
/// Deterministic, and clamped to a finite value for the diagnostics map.
fn condition_estimate(m: &DMatrix<f64>, chol: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    let n = m.nrows();
    if n == 1 {
        return 1.0;
    }
    // A fixed, slightly uneven start vector avoids landing exactly on an
    // eigenvector of a structured kernel.
    let start = DVector::from_fn(n, |i, _| 1.0 + 0.01 * (i as f64 + 1.0));

    let mut v = start.normalize();
    let mut lambda_max = 0.0;
    for _ in 0..CONDITION_ITERATIONS {
        let next = m * &v;
        lambda_max = v.dot(&next);
        let norm = next.norm();
        if norm == 0.0 {
            break;
        }
        v = next / norm;
    }

    let mut u = start.normalize();
    let mut lambda_min = lambda_max;
    for _ in 0..CONDITION_ITERATIONS {
        let next = chol.solve(&u);
        let norm = next.norm();
        if norm == 0.0 {
            break;
        }
        u = next / norm;
        lambda_min = u.dot(&(m * &u));
    }

    if lambda_min > 0.0 && lambda_max.is_finite() {
        (lambda_max / lambda_min).max(1.0)
    } else {
        f64::MAX
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::LN_2PI;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::{DMatrix, DVector};

    fn batch(points: &[f64], log_target: &[f64]) -> SampleBatch {
        let n = points.len();
        SampleBatch::from_parts(
            DMatrix::from_row_slice(1, n, points),
            DVector::zeros(n),
            DVector::from_row_slice(log_target),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn single_point_quadrature_in_closed_form() {
        // One observation y = 1 at the origin, v = 1, damping = 1:
        // a = 1/2, c = sqrt(2 pi)/2, so Z = sqrt(2 pi)/2, mu = 0, Sigma = v.
        let b = batch(&[0.0], &[0.0]);
        let fit = bmc_fit(&b, BmcVariance::Fixed(1.0), 1.0).unwrap();
        let m = fit.moments.proper().expect("single-bump fit is proper");
        assert_abs_diff_eq!(m.mass(), 0.5 * (2.0 * PI).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(m.mean()[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.cov()[(0, 0)], 1.0, epsilon = 1e-12);
        assert_eq!(fit.diagnostics["kernel_condition"], 1.0);
    }

    #[test]
    fn undamped_fit_integrates_an_exact_kernel_mixture() {
        // If p is itself a kernel expansion p(x) = sum a_j k(x, x_j) with
        // known coefficients, the undamped fit must reproduce its integrals
        // exactly: Z = sqrt(2 pi v) sum a_j.
        let v = 0.7;
        let centers = [-1.0, 0.2, 1.4];
        let coef = [0.5, 1.0, 0.25];
        let p = |x: f64| -> f64 {
            centers
                .iter()
                .zip(coef)
                .map(|(&c, a)| a * (-(x - c) * (x - c) / (2.0 * v)).exp())
                .sum()
        };
        let logs: Vec<f64> = centers.iter().map(|&c| p(c).ln()).collect();
        let b = batch(&centers, &logs);
        let fit = bmc_fit(&b, BmcVariance::Fixed(v), 0.0).unwrap();
        let m = fit.moments.proper().expect("mixture is proper");
        let z_true = (2.0 * PI * v).sqrt() * coef.iter().sum::<f64>();
        assert_relative_eq!(m.mass(), z_true, max_relative = 1e-10);
        let mu_true = (2.0 * PI * v).sqrt()
            * centers
                .iter()
                .zip(coef)
                .map(|(&c, a)| a * c)
                .sum::<f64>()
            / z_true;
        assert_relative_eq!(m.mean()[0], mu_true, max_relative = 1e-10);
    }

    #[test]
    fn far_apart_points_have_identity_like_conditioning() {
        let b = batch(&[-40.0, 0.0, 40.0], &[0.0, 0.0, 0.0]);
        let fit = bmc_fit(&b, BmcVariance::Fixed(1.0), 1.0).unwrap();
        let cond = fit.diagnostics["kernel_condition"];
        assert!(cond < 1.0 + 1e-9, "got condition {cond}");
    }

    #[test]
    fn crowded_points_are_worse_conditioned_than_spread_points() {
        let spread = batch(&[-2.0, 0.0, 2.0], &[0.0, 0.0, 0.0]);
        let crowded = batch(&[-0.02, 0.0, 0.02], &[0.0, 0.0, 0.0]);
        let c_spread =
            bmc_fit(&spread, BmcVariance::Fixed(1.0), 1.0).unwrap().diagnostics["kernel_condition"];
        let c_crowded =
            bmc_fit(&crowded, BmcVariance::Fixed(1.0), 1.0).unwrap().diagnostics["kernel_condition"];
        assert!(c_crowded > c_spread);
    }

    #[test]
    fn auto_variance_follows_the_weighted_point_cloud() {
        // Unit weights, points with sample variance 2/3.
        let b = batch(&[-1.0, 0.0, 1.0], &[0.0, 0.0, 0.0]);
        let fit = bmc_fit(&b, BmcVariance::Auto, 1.0).unwrap();
        assert_abs_diff_eq!(fit.diagnostics["kernel_variance"], 2.0 / 3.0, epsilon = 1e-12);
        // A single point has no spread: the importance fit is improper and
        // the unweighted variance is zero, so the last fallback fires.
        let single = batch(&[0.3], &[0.0]);
        let fit = bmc_fit(&single, BmcVariance::Auto, 1.0).unwrap();
        assert_eq!(fit.diagnostics["kernel_variance"], 1.0);
        assert_eq!(fit.diagnostics["kernel_variance_fallback"], 1.0);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let b = batch(&[0.0], &[0.0]);
        assert!(bmc_fit(&b, BmcVariance::Fixed(0.0), 1.0).is_err());
        assert!(bmc_fit(&b, BmcVariance::Fixed(f64::NAN), 1.0).is_err());
        assert!(bmc_fit(&b, BmcVariance::Auto, -1.0).is_err());
    }

    #[test]
    fn a_reasonable_gaussian_bump_is_fitted_well() {
        // p = standard normal density observed on a symmetric grid: the
        // quadrature should come close to (Z, mu, Sigma) = (1, 0, 1).
        let points: Vec<f64> = (0..13).map(|i| -3.0 + 0.5 * i as f64).collect();
        let logs: Vec<f64> = points.iter().map(|&x| -0.5 * LN_2PI - 0.5 * x * x).collect();
        let b = batch(&points, &logs);
        let fit = bmc_fit(&b, BmcVariance::Fixed(0.5), 1e-6).unwrap();
        let m = fit.moments.proper().expect("grid fit is proper");
        assert_relative_eq!(m.mass(), 1.0, max_relative = 0.05);
        assert_abs_diff_eq!(m.mean()[0], 0.0, epsilon = 0.05);
        assert_relative_eq!(m.cov()[(0, 0)], 1.0, max_relative = 0.1);
    }
}
