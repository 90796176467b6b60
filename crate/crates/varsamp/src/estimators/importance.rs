//! Importance sampling: moments of the weighted empirical distribution.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::{moments_to_natural, FeatureMap, GaussianMoments, MomentsOutcome};
use crate::sampling::SampleBatch;

use super::FitResult;

/// Fits an unnormalized Gaussian by importance sampling.
///
/// With weights `w_k = p(x_k) / pi(x_k)` the mass, mean, and covariance are
///
/// ```text
/// Z  = (1/N) sum w_k,
/// mu = sum w_k x_k / sum w_k,
/// S  = sum w_k (x_k - mu)(x_k - mu)' / sum w_k,
/// ```
///
/// i.e. the moments of the weighted point cloud. The weighted mean and
/// covariance are exactly the maximizer of the weighted Gaussian
/// log-likelihood `sum w_k log q(x_k)`, so no perturbation of `(mu, S)` can
/// increase it. Weights are normalized by their maximum before
/// exponentiation, which keeps the computation stable however extreme the
/// log-weights are.
///
/// The estimate is `Improper` when the weighted covariance is not positive
/// definite (too few distinct points, or weight concentrated on a
/// lower-dimensional set) or the mass is not representable.
pub fn is_fit(batch: &SampleBatch, fm: &FeatureMap) -> Result<FitResult> {
    if fm.dim() != batch.dim() {
        return Err(Error::DimensionMismatch {
            expected: batch.dim(),
            got: fm.dim(),
        });
    }
    let start = Instant::now();
    let n = batch.n_points();
    let d = batch.dim();
    let logw = batch.log_weights();

    let max_logw = logw.max();
    let u = DVector::from_fn(n, |k, _| (logw[k] - max_logw).exp());
    let u_sum: f64 = u.sum();
    // At least one u_k equals 1, so u_sum >= 1 and the ratios below are safe.
    let ess = u_sum * u_sum / u.dot(&u);

    let mut mean = DVector::zeros(d);
    for k in 0..n {
        mean.axpy(u[k], &batch.points().column(k).into_owned(), 1.0);
    }
    mean /= u_sum;

    let mut cov = DMatrix::zeros(d, d);
    for k in 0..n {
        let diff = batch.points().column(k) - &mean;
        cov.ger(u[k], &diff, &diff, 1.0);
    }
    cov /= u_sum;
    let cov = 0.5 * (&cov + cov.transpose());

    let log_mass = max_logw + (u_sum / n as f64).ln();
    let mass = log_mass.exp();

    let mut result = match GaussianMoments::new(mass, mean, cov) {
        Ok(m) => {
            let mut r = FitResult::new(MomentsOutcome::Proper(m.clone()));
            r.natural = moments_to_natural(fm, &m).ok();
            r
        }
        Err(_) => FitResult::new(MomentsOutcome::Improper),
    };
    result.insert_diag("ess", ess);
    result.insert_diag("max_log_weight", max_logw);
    result.fit_seconds = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Plug-in estimate of the per-sample asymptotic covariance of the
/// importance sampling feature integrals,
///
/// ```text
/// Sigma_IS = int (p^2 / pi) phi phi' - I_p(phi) I_p(phi)',
/// ```
///
/// estimated by `(1/N) sum w_k^2 phi_k phi_k' - Ihat Ihat'` with
/// `Ihat = (1/N) sum w_k phi_k`. The replication variance of `Ihat` over
/// independent batches of size `N` is approximately `Sigma_IS / N`.
pub fn is_variance(batch: &SampleBatch, fm: &FeatureMap) -> Result<DMatrix<f64>> {
    let phi = fm.feature_matrix(batch.points())?;
    let n = batch.n_points();
    let p = fm.n_params();
    let w = DVector::from_fn(n, |k, _| batch.log_weights()[k].exp());

    let i_hat = (&phi * &w) / n as f64;
    let mut second = DMatrix::zeros(p, p);
    let mut scaled = phi.clone();
    for k in 0..n {
        let mut col = scaled.column_mut(k);
        col *= w[k] * w[k];
    }
    second.gemm(1.0 / n as f64, &scaled, &phi.transpose(), 0.0);
    let mut out = second - &i_hat * i_hat.transpose();
    out = 0.5 * (&out + out.transpose());
    Ok(out)
}
