//! Variational fitting: Newton minimization of the sampled divergence.
//!
//! Writing `q_theta(x) = exp(theta' phi(x))` and weighting each point by
//! `w_k = p(x_k) / pi(x_k)`, the Monte Carlo estimate of the generalized
//! Kullback-Leibler divergence `D(p || q_theta)` is (up to a constant in
//! `theta`)
//!
//! ```text
//! L(theta) = (1/N) sum_k w_k [ log p(x_k) - theta' phi_k - 1
//!                              + q_theta(x_k) / p(x_k) ].
//! ```
//!
//! Its gradient and Hessian are
//!
//! ```text
//! grad = (1/N) Phi (wbar - w),        wbar_k = w_k q_theta(x_k) / p(x_k),
//! hess = (1/N) Phi diag(wbar) Phi',
//! ```
//!
//! so the Hessian is a positive semidefinite Gram matrix at every `theta`:
//! the objective is convex, and strictly convex whenever `Phi` has full row
//! rank. In that case the minimizer exists and is unique, which is why
//! [`vs_fit`] refuses rank-deficient batches instead of returning an
//! arbitrary point of a flat valley.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::{natural_to_moments, FeatureMap, NaturalParams};
use crate::sampling::SampleBatch;

use super::{is_fit, matrix_rank, FitResult};

/// Exponent above which `exp` overflows f64; used to flag divergent
/// objective evaluations instead of producing infinities mid-formula.
const EXP_OVERFLOW: f64 = 700.0;

/// Knobs of the Newton solver in [`vs_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct VsConfig {
    /// Stop when the gradient sup-norm falls below this.
    pub grad_tol: f64,
    /// Maximum number of Newton steps.
    pub max_iterations: usize,
    /// Smallest backtracking step; below this the line search counts as
    /// stalled and the best point so far is returned.
    pub min_step: f64,
    /// Relative ridge added to the Hessian when its Cholesky factorization
    /// fails, escalated tenfold up to three times.
    pub hessian_jitter: f64,
}

impl Default for VsConfig {
    fn default() -> Self {
        VsConfig {
            grad_tol: 1e-8,
            max_iterations: 200,
            min_step: 1e-12,
            hessian_jitter: 1e-10,
        }
    }
}

impl VsConfig {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("grad_tol", self.grad_tol),
            ("min_step", self.min_step),
            ("hessian_jitter", self.hessian_jitter),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument(
                "max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// The sampled divergence and its first two derivatives at one `theta`.
#[derive(Debug, Clone)]
pub struct VsObjective {
    /// `L(theta)`; `+inf` when the evaluation overflowed.
    pub value: f64,
    /// Gradient in the natural parameters (zeros when overflowed).
    pub gradient: DVector<f64>,
    /// Hessian in the natural parameters, symmetric positive semidefinite
    /// (zeros when overflowed).
    pub hessian: DMatrix<f64>,
    /// True when `q_theta / p` overflowed at some point of the batch.
    pub overflowed: bool,
}

/// The batch-dependent parts of the objective, precomputed once per fit.
struct VsProblem {
    phi: DMatrix<f64>,
    w: DVector<f64>,
    log_p: DVector<f64>,
}

impl VsProblem {
    fn new(batch: &SampleBatch, fm: &FeatureMap) -> Result<Self> {
        let phi = fm.feature_matrix(batch.points())?;
        if !phi.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "feature matrix has non-finite entries".into(),
            ));
        }
        let n = batch.n_points();
        let w = DVector::from_fn(n, |k, _| batch.log_weights()[k].exp());
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "importance weights overflow; the batch cannot be fitted".into(),
            ));
        }
        Ok(VsProblem {
            phi,
            w,
            log_p: batch.log_target().clone(),
        })
    }

    fn n_points(&self) -> usize {
        self.phi.ncols()
    }

    /// `L(theta)` alone, for line searches. The pointwise term is
    /// `w * (expm1(e) - e)` with `e = theta' phi - log p`, which stays
    /// accurate near the optimum where `e -> 0` and the naive form would
    /// cancel catastrophically.
    fn value(&self, theta: &DVector<f64>) -> f64 {
        let s = self.phi.tr_mul(theta);
        let mut total = 0.0;
        for k in 0..self.n_points() {
            if self.w[k] == 0.0 {
                // Zero-weight points drop out of the Monte Carlo sum; skip
                // them rather than evaluate 0 * inf.
                continue;
            }
            let e = s[k] - self.log_p[k];
            if e > EXP_OVERFLOW {
                return f64::INFINITY;
            }
            total += self.w[k] * (e.exp_m1() - e);
        }
        if total.is_finite() {
            total / self.n_points() as f64
        } else {
            f64::INFINITY
        }
    }

    /// Value, gradient, and Hessian together.
    fn full(&self, theta: &DVector<f64>) -> VsObjective {
        let n_params = self.phi.nrows();
        let n = self.n_points();
        let s = self.phi.tr_mul(theta);
        let mut value = 0.0;
        let mut wbar = DVector::zeros(n);
        for k in 0..n {
            if self.w[k] == 0.0 {
                continue;
            }
            let e = s[k] - self.log_p[k];
            if e > EXP_OVERFLOW {
                value = f64::INFINITY;
                break;
            }
            let r = e.exp();
            wbar[k] = self.w[k] * r;
            value += self.w[k] * (e.exp_m1() - e);
        }
        if !value.is_finite() || !wbar.iter().all(|v| v.is_finite()) {
            return VsObjective {
                value: f64::INFINITY,
                gradient: DVector::zeros(n_params),
                hessian: DMatrix::zeros(n_params, n_params),
                overflowed: true,
            };
        }
        let scale = 1.0 / n as f64;
        let gradient = (&self.phi * (&wbar - &self.w)) * scale;
        let mut scaled = self.phi.clone();
        for k in 0..n {
            let mut col = scaled.column_mut(k);
            col *= wbar[k];
        }
        let mut hessian = DMatrix::zeros(n_params, n_params);
        hessian.gemm(scale, &scaled, &self.phi.transpose(), 0.0);
        let hessian = 0.5 * (&hessian + hessian.transpose());
        VsObjective {
            value: value * scale,
            gradient,
            hessian,
            overflowed: false,
        }
    }
}

/// Evaluates the sampled divergence, its gradient, and its Hessian at an
/// arbitrary `theta`.
pub fn vs_objective(
    batch: &SampleBatch,
    fm: &FeatureMap,
    params: &NaturalParams,
) -> Result<VsObjective> {
    if params.dim() != fm.dim() {
        return Err(Error::DimensionMismatch {
            expected: fm.dim(),
            got: params.dim(),
        });
    }
    let problem = VsProblem::new(batch, fm)?;
    Ok(problem.full(params.theta()))
}

/// Fits an unnormalized Gaussian by minimizing the sampled divergence with
/// damped Newton steps.
///
/// Requires the feature matrix to have full rank (otherwise the minimizer is
/// not unique and the call fails with `RankDeficient`). Newton starts from
/// the importance sampling fit when that is proper, else from the unweighted
/// sample moments, else from the standard normal; each candidate is accepted
/// only if the objective is finite there. Steps are backtracked until the
/// objective strictly decreases, and a Hessian whose factorization fails is
/// ridged by an escalating relative jitter.
///
/// The returned natural parameters are always the best point visited. The
/// moment form is `Improper` when the minimizer's quadratic form is not
/// negative definite, which legitimately happens on small batches.
///
/// Diagnostics: `phi_rank`, `grad_sup_norm`, `objective`, `converged`
/// (0 or 1), and when relevant `hessian_jitter`, `line_search_stalled`,
/// `init_overflow`, `hessian_breakdown`.
pub fn vs_fit(batch: &SampleBatch, fm: &FeatureMap, config: &VsConfig) -> Result<FitResult> {
    config.validate()?;
    let start = Instant::now();
    let problem = VsProblem::new(batch, fm)?;
    let n_params = fm.n_params();
    let rank = matrix_rank(&problem.phi);
    if rank < n_params {
        return Err(Error::RankDeficient {
            rank,
            needed: n_params,
        });
    }

    // Initialization ladder: IS fit -> raw sample moments -> standard
    // normal, first candidate with a finite objective wins.
    let is_result = is_fit(batch, fm)?;
    let mut candidates: Vec<DVector<f64>> = Vec::new();
    if let Some(m) = is_result.moments.proper() {
        if let Ok(p) = crate::family::moments_to_natural(fm, m) {
            candidates.push(p.theta().clone());
        }
    }
    if let Some(theta) = sample_moment_candidate(batch, fm) {
        candidates.push(theta);
    }
    candidates.push(
        crate::family::moments_to_natural(fm, &crate::family::GaussianMoments::standard_normal(fm.dim()))
            .expect("standard normal converts")
            .theta()
            .clone(),
    );

    let mut theta = None;
    for cand in candidates {
        if problem.value(&cand).is_finite() {
            theta = Some(cand);
            break;
        }
    }
    let Some(mut theta) = theta else {
        let mut result = FitResult::new(crate::family::MomentsOutcome::Improper);
        result.iterations = Some(0);
        result.insert_diag("phi_rank", rank as f64);
        result.insert_diag("converged", 0.0);
        result.insert_diag("init_overflow", 1.0);
        result.fit_seconds = start.elapsed().as_secs_f64();
        return Ok(result);
    };

    let mut state = problem.full(&theta);
    let mut iterations = 0usize;
    let mut converged = false;
    let mut jitter_used = 0.0f64;
    let mut stalled = false;
    let mut breakdown = false;

    while iterations < config.max_iterations {
        if state.gradient.amax() <= config.grad_tol {
            converged = true;
            break;
        }
        let Some(delta) = solve_newton_step(&state.hessian, &state.gradient, config, &mut jitter_used)
        else {
            breakdown = true;
            break;
        };

        let mut step = 1.0;
        let mut accepted = false;
        while step >= config.min_step {
            let candidate = &theta + &delta * step;
            if problem.value(&candidate) < state.value {
                theta = candidate;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            stalled = true;
            break;
        }
        state = problem.full(&theta);
        iterations += 1;
    }
    if !converged && state.gradient.amax() <= config.grad_tol {
        converged = true;
    }

    let params = NaturalParams::new(fm, theta)?;
    let mut result = FitResult::new(natural_to_moments(&params));
    result.natural = Some(params);
    result.iterations = Some(iterations);
    result.insert_diag("phi_rank", rank as f64);
    result.insert_diag("grad_sup_norm", state.gradient.amax());
    result.insert_diag("objective", state.value);
    result.insert_diag("converged", if converged { 1.0 } else { 0.0 });
    if jitter_used > 0.0 {
        result.insert_diag("hessian_jitter", jitter_used);
    }
    if stalled {
        result.insert_diag("line_search_stalled", 1.0);
    }
    if breakdown {
        result.insert_diag("hessian_breakdown", 1.0);
    }
    result.fit_seconds = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Natural parameters of the Gaussian with the batch's unweighted sample
/// moments and the importance mass estimate, when those moments are proper.
fn sample_moment_candidate(batch: &SampleBatch, fm: &FeatureMap) -> Option<DVector<f64>> {
    let n = batch.n_points();
    let d = batch.dim();
    let mut mean = DVector::zeros(d);
    for k in 0..n {
        mean += batch.points().column(k);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for k in 0..n {
        let diff = batch.points().column(k) - &mean;
        cov.ger(1.0 / n as f64, &diff, &diff, 1.0);
    }
    let cov = 0.5 * (&cov + cov.transpose());
    let max_logw = batch.log_weights().max();
    let mean_w: f64 = batch
        .log_weights()
        .iter()
        .map(|lw| (lw - max_logw).exp())
        .sum::<f64>()
        / n as f64;
    let mass = (max_logw + mean_w.ln()).exp();
    let mass = if mass.is_finite() && mass > 0.0 { mass } else { 1.0 };
    let moments = crate::family::GaussianMoments::new(mass, mean, cov).ok()?;
    Some(
        crate::family::moments_to_natural(fm, &moments)
            .ok()?
            .theta()
            .clone(),
    )
}

/// Solves `H delta = -g` by Cholesky, ridging `H` with an escalating
/// relative jitter when the factorization fails. Returns `None` when even
/// the largest jitter does not help.
fn solve_newton_step(
    hessian: &DMatrix<f64>,
    gradient: &DVector<f64>,
    config: &VsConfig,
    jitter_used: &mut f64,
) -> Option<DVector<f64>> {
    let n = hessian.nrows();
    let scale = hessian.diagonal().amax().max(f64::MIN_POSITIVE);
    let neg_grad = -gradient;
    let mut jitter = 0.0;
    for round in 0..=3 {
        let ridged = if round == 0 {
            hessian.clone()
        } else {
            jitter = config.hessian_jitter * 10f64.powi(round - 1) * scale;
            hessian + DMatrix::identity(n, n) * jitter
        };
        if let Some(chol) = Cholesky::new(ridged) {
            if jitter > *jitter_used {
                *jitter_used = jitter;
            }
            return Some(chol.solve(&neg_grad));
        }
    }
    None
}

/// Plug-in estimate of the middle matrix of the variational estimator's
/// sandwich covariance,
///
/// ```text
/// Sigma(theta) = int ((p - q_theta)^2 / pi) phi phi' dx,
/// ```
///
/// estimated by `(1/N) sum [w_k (1 - q_theta(x_k)/p(x_k))]^2 phi_k phi_k'`.
/// At a `theta` where `q_theta` matches `p` on the batch the estimate is
/// exactly zero — the variational estimator loses its Monte Carlo noise as
/// the family becomes exact, which importance sampling never does.
pub fn vs_asymptotic_variance(
    batch: &SampleBatch,
    fm: &FeatureMap,
    params: &NaturalParams,
) -> Result<DMatrix<f64>> {
    if params.dim() != fm.dim() {
        return Err(Error::DimensionMismatch {
            expected: fm.dim(),
            got: params.dim(),
        });
    }
    let problem = VsProblem::new(batch, fm)?;
    let n = problem.n_points();
    let p = fm.n_params();
    let s = problem.phi.tr_mul(params.theta());
    let mut scaled = problem.phi.clone();
    for k in 0..n {
        let c = if problem.w[k] == 0.0 {
            0.0
        } else {
            let r = (s[k] - problem.log_p[k]).exp();
            let a = problem.w[k] * (1.0 - r);
            a * a
        };
        let mut col = scaled.column_mut(k);
        col *= c;
    }
    let mut out = DMatrix::zeros(p, p);
    out.gemm(1.0 / n as f64, &scaled, &problem.phi.transpose(), 0.0);
    let out = 0.5 * (&out + out.transpose());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{moments_to_natural, GaussianMoments};
    use crate::sampling::matched_sample;
    use crate::targets::{ExpPowerTarget, GaussianTarget};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian_batch(d: usize, beta: f64, n: usize, seed: u64) -> SampleBatch {
        let target = ExpPowerTarget::new(d, beta).unwrap();
        let pi = GaussianMoments::standard_normal(d);
        matched_sample(&target, &pi, n, seed).unwrap()
    }

    #[test]
    fn gaussian_targets_are_recovered_to_solver_tolerance() {
        let fm = FeatureMap::new(1);
        let batch = gaussian_batch(1, 2.0, 32, 17);
        let fit = vs_fit(&batch, &fm, &VsConfig::default()).unwrap();
        assert_eq!(fit.diagnostics["converged"], 1.0);
        let m = fit.moments.proper().expect("proper at beta = 2");
        assert_abs_diff_eq!(m.mass(), 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(m.mean()[0], 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(m.cov()[(0, 0)], 1.0, epsilon = 1e-6);
        assert!(fit.iterations.unwrap() <= 50);
    }

    #[test]
    fn rank_deficient_batches_are_refused() {
        let fm = FeatureMap::new(1);
        let batch = SampleBatch::from_parts(
            DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]),
            DVector::zeros(2),
            DVector::zeros(2),
            0.0,
        )
        .unwrap();
        let err = vs_fit(&batch, &fm, &VsConfig::default()).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { rank: 2, needed: 3 }));
    }

    #[test]
    fn objective_decreases_along_the_newton_path() {
        let fm = FeatureMap::new(2);
        let batch = gaussian_batch(2, 1.0, 64, 3);
        let problem = VsProblem::new(&batch, &fm).unwrap();
        let start = moments_to_natural(&fm, &GaussianMoments::standard_normal(2)).unwrap();
        let fit = vs_fit(&batch, &fm, &VsConfig::default()).unwrap();
        let end = fit.natural.as_ref().unwrap();
        assert!(problem.value(end.theta()) <= problem.value(start.theta()));
    }

    #[test]
    fn gradient_vanishes_and_objective_is_minimal_at_the_fit() {
        let fm = FeatureMap::new(1);
        let batch = gaussian_batch(1, 3.0, 96, 8);
        let fit = vs_fit(&batch, &fm, &VsConfig::default()).unwrap();
        let params = fit.natural.as_ref().unwrap();
        let at_min = vs_objective(&batch, &fm, params).unwrap();
        assert!(at_min.gradient.amax() <= 1e-8);
        // The objective is convex: every probe point sits above the fit.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let probe = DVector::from_fn(3, |i, _| {
                params.theta()[i] + rng.random_range(-0.5..0.5)
            });
            let probe_params = NaturalParams::new(&fm, probe).unwrap();
            let there = vs_objective(&batch, &fm, &probe_params).unwrap();
            assert!(there.value >= at_min.value);
        }
    }

    #[test]
    fn hessian_is_positive_semidefinite_everywhere() {
        let fm = FeatureMap::new(1);
        let batch = gaussian_batch(1, 1.0, 48, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..30 {
            let theta = DVector::from_fn(3, |_, _| rng.random_range(-1.0..0.5));
            let params = NaturalParams::new(&fm, theta).unwrap();
            let obj = vs_objective(&batch, &fm, &params).unwrap();
            if obj.overflowed {
                continue;
            }
            let eigen = obj.hessian.clone().symmetric_eigen();
            let min = eigen.eigenvalues.min();
            let scale = eigen.eigenvalues.amax().max(1.0);
            assert!(min >= -1e-12 * scale, "negative eigenvalue {min}");
        }
    }

    #[test]
    fn overflow_is_flagged_not_propagated() {
        let fm = FeatureMap::new(1);
        let batch = SampleBatch::from_parts(
            DMatrix::from_row_slice(1, 3, &[-2.0, 0.0, 2.0]),
            DVector::zeros(3),
            DVector::zeros(3),
            0.0,
        )
        .unwrap();
        // A wildly positive quadratic coefficient makes q/p overflow:
        // exp(300 * 4) is far past what f64 can hold.
        let theta = DVector::from_vec(vec![0.0, 0.0, 300.0]);
        let params = NaturalParams::new(&fm, theta).unwrap();
        let obj = vs_objective(&batch, &fm, &params).unwrap();
        assert!(obj.overflowed);
        assert_eq!(obj.value, f64::INFINITY);
        assert!(obj.gradient.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn asymptotic_variance_vanishes_when_the_family_contains_the_target() {
        let fm = FeatureMap::new(2);
        let pi = GaussianMoments::standard_normal(2);
        let target = GaussianTarget::new(pi.clone());
        let batch = matched_sample(&target, &pi, 64, 5).unwrap();
        let params = moments_to_natural(&fm, &pi).unwrap();
        let v = vs_asymptotic_variance(&batch, &fm, &params).unwrap();
        // q matches p at every point up to summation-order rounding in the
        // exponent, so (1 - q/p)^2 is at the square of machine epsilon.
        assert!(v.amax() < 1e-25, "got {}", v.amax());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let fm = FeatureMap::new(1);
        let batch = gaussian_batch(1, 2.0, 8, 0);
        let bad = VsConfig {
            grad_tol: 0.0,
            ..VsConfig::default()
        };
        assert!(vs_fit(&batch, &fm, &bad).is_err());
        let bad = VsConfig {
            max_iterations: 0,
            ..VsConfig::default()
        };
        assert!(vs_fit(&batch, &fm, &bad).is_err());
    }
}
