//! Instrumental samplers: matched Gaussian draws and annealed chains.
//!
//! Both samplers produce a [`SampleBatch`]: points `x_1..x_N` drawn from an
//! instrumental density `pi` with unit mass, together with the cached
//! log-weights `log w_k = log p(x_k) - log pi(x_k)` and target log-densities
//! `log p(x_k)` that every estimator consumes. Caching both values in the
//! batch means each estimator prices only its own linear algebra, not
//! repeated target evaluations.
//!
//! * [`matched_sample`] draws i.i.d. points from a known Gaussian
//!   instrumental, typically one matched to the target's location and scale.
//! * [`annealed_sample`] runs one independent annealed importance sampling
//!   chain per point (Neal's scheme): the chain starts at a draw from a wide
//!   Gaussian `pi`, passes through the bridge densities
//!   `f_t = pi^(1 - lambda_t) p^(lambda_t)` on a geometric ladder, moving by
//!   one Metropolis step per rung, and accumulates
//!   `log w = sum_t (lambda_t - lambda_(t-1)) [log p - log pi]` along the
//!   way. The resulting weighted points are unbiased for integrals under
//!   `p` even though no tuned instrumental is available.
//!
//! Determinism: a batch is a pure function of `(target, parameters, seed)`.
//! Annealed chains additionally use one independent, stream-indexed
//! generator per chain, so chain `k` is the same whether the batch holds 10
//! chains or 10,000.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::family::{GaussianDensity, GaussianMoments};
use crate::targets::TargetDensity;

/// How many fresh initial draws an annealed chain attempts before giving up
/// on finding a point where the target log-density is finite.
const MAX_INITIAL_DRAWS: usize = 100;

/// Weighted points drawn from an instrumental density, with the target
/// log-densities cached.
///
/// Invariants: at least one point, every log-weight finite, and no
/// log-target value is `NaN`.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    /// One point per column (`dim x n_points`).
    points: DMatrix<f64>,
    log_weights: DVector<f64>,
    log_target: DVector<f64>,
    sampling_seconds: f64,
}

impl SampleBatch {
    /// Builds a batch from raw parts, checking the invariants.
    pub fn from_parts(
        points: DMatrix<f64>,
        log_weights: DVector<f64>,
        log_target: DVector<f64>,
        sampling_seconds: f64,
    ) -> Result<Self> {
        let n = points.ncols();
        if n == 0 || points.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "a batch needs at least one point in at least one dimension".into(),
            ));
        }
        if log_weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: log_weights.len(),
            });
        }
        if log_target.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: log_target.len(),
            });
        }
        if !points.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("points must be finite".into()));
        }
        if !log_weights.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "log-weights must be finite (the target vanished at a sampled point?)".into(),
            ));
        }
        if log_target.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidArgument("log-target must not be NaN".into()));
        }
        Ok(Self {
            points,
            log_weights,
            log_target,
            sampling_seconds,
        })
    }

    /// Draws i.i.d. points from `instrumental` and weighs them against
    /// `target`. Convenience for hand-built experiments; equivalent to
    /// [`matched_sample`].
    pub fn from_instrumental(
        target: &dyn TargetDensity,
        instrumental: &GaussianMoments,
        n_points: usize,
        seed: u64,
    ) -> Result<Self> {
        matched_sample(target, instrumental, n_points, seed)
    }

    /// Number of points in the batch.
    pub fn n_points(&self) -> usize {
        self.points.ncols()
    }

    /// Dimension of the points.
    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    /// The points, one per column.
    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    /// Point `k` as a slice.
    pub fn point(&self, k: usize) -> &[f64] {
        let d = self.dim();
        // Column-major storage: column k is one contiguous run.
        &self.points.as_slice()[k * d..(k + 1) * d]
    }

    /// `log p(x_k) - log pi(x_k)` for every point.
    pub fn log_weights(&self) -> &DVector<f64> {
        &self.log_weights
    }

    /// `log p(x_k)` for every point.
    pub fn log_target(&self) -> &DVector<f64> {
        &self.log_target
    }

    /// Wall-clock seconds spent producing the batch (zero for hand-built
    /// batches).
    pub fn sampling_seconds(&self) -> f64 {
        self.sampling_seconds
    }
}

/// Parameters of the annealed sampler: the bridge ladder and the kernel
/// scales.
///
/// The ladder is `lambda_0 = 0`, a geometric grid of `steps` values from
/// `lambda_start` to `lambda_end`, then `lambda_(T+1) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealingSchedule {
    lambda_start: f64,
    lambda_end: f64,
    steps: usize,
    proposal_variance: f64,
    initial_variance: f64,
}

impl AnnealingSchedule {
    /// Validates and builds a schedule.
    ///
    /// Requires `0 < lambda_start < lambda_end < 1`, at least two interior
    /// steps (the geometric grid needs two endpoints), and positive, finite
    /// variances.
    pub fn new(
        lambda_start: f64,
        lambda_end: f64,
        steps: usize,
        proposal_variance: f64,
        initial_variance: f64,
    ) -> Result<Self> {
        if !(lambda_start.is_finite() && lambda_end.is_finite())
            || lambda_start <= 0.0
            || lambda_end >= 1.0
            || lambda_start >= lambda_end
        {
            return Err(Error::InvalidArgument(format!(
                "need 0 < lambda_start < lambda_end < 1, got {lambda_start} and {lambda_end}"
            )));
        }
        if steps < 2 {
            return Err(Error::InvalidArgument(
                "the geometric ladder needs at least two interior steps".into(),
            ));
        }
        for (name, v) in [
            ("proposal_variance", proposal_variance),
            ("initial_variance", initial_variance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        Ok(Self {
            lambda_start,
            lambda_end,
            steps,
            proposal_variance,
            initial_variance,
        })
    }

    /// First interior inverse temperature.
    pub fn lambda_start(&self) -> f64 {
        self.lambda_start
    }

    /// Last interior inverse temperature.
    pub fn lambda_end(&self) -> f64 {
        self.lambda_end
    }

    /// Number of interior rungs (equals the number of Metropolis moves per
    /// chain).
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Variance of the isotropic Gaussian random-walk proposal.
    pub fn proposal_variance(&self) -> f64 {
        self.proposal_variance
    }

    /// Variance of the isotropic Gaussian the chains start from (which is
    /// also the instrumental density the weights refer to).
    pub fn initial_variance(&self) -> f64 {
        self.initial_variance
    }

    /// The full ladder `0, lambda_1, .., lambda_T, 1` (length `steps + 2`).
    pub fn ladder(&self) -> Vec<f64> {
        let t = self.steps;
        let ratio = self.lambda_end / self.lambda_start;
        let mut out = Vec::with_capacity(t + 2);
        out.push(0.0);
        for i in 0..t {
            let frac = i as f64 / (t - 1) as f64;
            out.push(self.lambda_start * ratio.powf(frac));
        }
        out.push(1.0);
        out
    }
}

impl Default for AnnealingSchedule {
    /// The long schedule from the reference experiments: 1000 rungs from
    /// `1e-3` to `0.999`, proposal variance `0.025`, initial variance `25`.
    fn default() -> Self {
        Self::new(0.001, 0.999, 1000, 0.025, 25.0).expect("reference schedule is valid")
    }
}

/// Draws `n_points` i.i.d. points from a unit-mass Gaussian instrumental and
/// weighs them against `target`.
///
/// The instrumental must have mass `1` (within `1e-12`): the weights
/// `w = p / pi` only estimate integrals under `p` when `pi` is a probability
/// density.
pub fn matched_sample(
    target: &dyn TargetDensity,
    instrumental: &GaussianMoments,
    n_points: usize,
    seed: u64,
) -> Result<SampleBatch> {
    if instrumental.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: instrumental.dim(),
        });
    }
    if (instrumental.mass() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "instrumental must be a probability density (mass 1), got mass {}",
            instrumental.mass()
        )));
    }
    if n_points == 0 {
        return Err(Error::InvalidArgument("need at least one point".into()));
    }

    let start = Instant::now();
    let d = target.dim();
    let pdf = GaussianDensity::new(instrumental);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut points = DMatrix::zeros(d, n_points);
    let mut log_weights = DVector::zeros(n_points);
    let mut log_target = DVector::zeros(n_points);
    let mut x = vec![0.0; d];
    for k in 0..n_points {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let xv = pdf.mean() + pdf.chol_l() * z;
        x.copy_from_slice(xv.as_slice());
        let lq = pdf.log_density(&x);
        let lp = target.log_density(&x);
        points.set_column(k, &xv);
        log_target[k] = lp;
        log_weights[k] = lp - lq;
    }
    SampleBatch::from_parts(points, log_weights, log_target, start.elapsed().as_secs_f64())
}

/// Runs one annealed importance sampling chain per point and returns the
/// final states with their accumulated log-weights.
///
/// Each chain starts from the wide Gaussian `N(0, initial_variance * I)`,
/// retrying a bounded number of times if the target log-density is `-inf`
/// at the starting point. At rung `t` the chain adds
/// `(lambda_t - lambda_(t-1)) * (log p - log pi)` at its current state and
/// then takes one Metropolis step with an isotropic Gaussian random-walk
/// proposal targeting `pi^(1 - lambda_t) p^(lambda_t)`. Each chain costs
/// `steps + 1` target evaluations plus any initial retries.
pub fn annealed_sample(
    target: &dyn TargetDensity,
    schedule: &AnnealingSchedule,
    n_points: usize,
    seed: u64,
) -> Result<SampleBatch> {
    if n_points == 0 {
        return Err(Error::InvalidArgument("need at least one point".into()));
    }
    let start = Instant::now();
    let d = target.dim();
    let instrumental = GaussianMoments::isotropic(d, 1.0, schedule.initial_variance())?;
    let pdf_pi = GaussianDensity::new(&instrumental);
    let ladder = schedule.ladder();
    let s0 = schedule.initial_variance().sqrt();
    let prop_sd = schedule.proposal_variance().sqrt();

    let mut points = DMatrix::zeros(d, n_points);
    let mut log_weights = DVector::zeros(n_points);
    let mut log_target = DVector::zeros(n_points);

    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    for k in 0..n_points {
        // One independent generator per chain: the chain index selects the
        // stream, so a chain's path does not depend on how many chains run.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);

        let mut lp = f64::NEG_INFINITY;
        let mut attempts = 0;
        while !lp.is_finite() {
            if attempts == MAX_INITIAL_DRAWS {
                return Err(Error::InitialDrawRejected { attempts });
            }
            for xi in x.iter_mut() {
                *xi = s0 * rng.sample::<f64, _>(StandardNormal);
            }
            lp = target.log_density(&x);
            attempts += 1;
        }
        let mut lq = pdf_pi.log_density(&x);

        let mut logw = 0.0;
        for t in 1..ladder.len() {
            logw += (ladder[t] - ladder[t - 1]) * (lp - lq);
            if t == ladder.len() - 1 {
                break;
            }
            let lambda = ladder[t];
            for (yi, xi) in y.iter_mut().zip(x.iter()) {
                *yi = xi + prop_sd * rng.sample::<f64, _>(StandardNormal);
            }
            let lp_y = target.log_density(&y);
            let lq_y = pdf_pi.log_density(&y);
            let log_ratio = (1.0 - lambda) * (lq_y - lq) + lambda * (lp_y - lp);
            let u: f64 = rng.random();
            if u.ln() < log_ratio {
                x.copy_from_slice(&y);
                lp = lp_y;
                lq = lq_y;
            }
        }

        points.set_column(k, &DVector::from_row_slice(&x));
        log_target[k] = lp;
        log_weights[k] = logw;
    }
    SampleBatch::from_parts(points, log_weights, log_target, start.elapsed().as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{ExpPowerTarget, GaussianTarget};
    use approx::assert_abs_diff_eq;

    #[test]
    fn ladder_is_geometric_with_pinned_endpoints() {
        let s = AnnealingSchedule::new(0.001, 0.999, 10, 0.025, 25.0).unwrap();
        let ladder = s.ladder();
        assert_eq!(ladder.len(), 12);
        assert_eq!(ladder[0], 0.0);
        assert_eq!(*ladder.last().unwrap(), 1.0);
        assert_abs_diff_eq!(ladder[1], 0.001, epsilon = 1e-15);
        assert_abs_diff_eq!(ladder[10], 0.999, epsilon = 1e-12);
        let r = ladder[2] / ladder[1];
        for t in 2..=10 {
            assert_abs_diff_eq!(ladder[t] / ladder[t - 1], r, epsilon = 1e-12);
        }
        assert!(ladder.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn schedule_rejects_bad_parameters() {
        assert!(AnnealingSchedule::new(0.0, 0.999, 10, 0.025, 25.0).is_err());
        assert!(AnnealingSchedule::new(0.5, 0.4, 10, 0.025, 25.0).is_err());
        assert!(AnnealingSchedule::new(0.001, 1.0, 10, 0.025, 25.0).is_err());
        assert!(AnnealingSchedule::new(0.001, 0.999, 1, 0.025, 25.0).is_err());
        assert!(AnnealingSchedule::new(0.001, 0.999, 10, 0.0, 25.0).is_err());
        assert!(AnnealingSchedule::new(0.001, 0.999, 10, 0.025, -1.0).is_err());
    }

    #[test]
    fn matched_batches_are_reproducible() {
        let target = ExpPowerTarget::new(2, 1.5).unwrap();
        let pi = GaussianMoments::standard_normal(2);
        let a = matched_sample(&target, &pi, 64, 99).unwrap();
        let b = matched_sample(&target, &pi, 64, 99).unwrap();
        assert_eq!(a.points(), b.points());
        assert_eq!(a.log_weights(), b.log_weights());
        let c = matched_sample(&target, &pi, 64, 100).unwrap();
        assert_ne!(a.points(), c.points());
    }

    #[test]
    fn matched_weights_vanish_when_target_equals_instrumental() {
        let pi = GaussianMoments::standard_normal(3);
        let target = GaussianTarget::new(pi.clone());
        let batch = matched_sample(&target, &pi, 128, 7).unwrap();
        assert!(batch.log_weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn matched_requires_unit_mass_instrumental() {
        let target = ExpPowerTarget::new(1, 2.0).unwrap();
        let pi = GaussianMoments::isotropic(1, 2.0, 1.0).unwrap();
        assert!(matched_sample(&target, &pi, 8, 0).is_err());
    }

    #[test]
    fn annealed_weights_vanish_when_target_equals_instrumental() {
        let schedule = AnnealingSchedule::new(0.001, 0.999, 20, 0.025, 25.0).unwrap();
        let pi = GaussianMoments::isotropic(2, 1.0, 25.0).unwrap();
        let target = GaussianTarget::new(pi);
        let batch = annealed_sample(&target, &schedule, 32, 5).unwrap();
        assert!(batch.log_weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn annealed_chains_are_stream_indexed() {
        let target = ExpPowerTarget::new(1, 2.0).unwrap();
        let schedule = AnnealingSchedule::new(0.001, 0.999, 30, 0.025, 25.0).unwrap();
        let small = annealed_sample(&target, &schedule, 8, 42).unwrap();
        let large = annealed_sample(&target, &schedule, 16, 42).unwrap();
        // Chain k is identical no matter how many chains the batch holds.
        for k in 0..8 {
            assert_eq!(small.point(k), large.point(k));
            assert_eq!(small.log_weights()[k], large.log_weights()[k]);
        }
        // And the batch is reproducible end to end.
        let again = annealed_sample(&target, &schedule, 8, 42).unwrap();
        assert_eq!(small.points(), again.points());
        assert_eq!(small.log_weights(), again.log_weights());
    }

    #[test]
    fn empty_batches_are_rejected() {
        let target = ExpPowerTarget::new(1, 2.0).unwrap();
        let pi = GaussianMoments::standard_normal(1);
        assert!(matched_sample(&target, &pi, 0, 0).is_err());
        let schedule = AnnealingSchedule::default();
        assert!(annealed_sample(&target, &schedule, 0, 0).is_err());
    }

    #[test]
    fn from_parts_checks_invariants() {
        let points = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let ok = SampleBatch::from_parts(
            points.clone(),
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![-1.0, f64::NEG_INFINITY]),
            0.0,
        );
        assert!(ok.is_ok());
        let bad_weight = SampleBatch::from_parts(
            points.clone(),
            DVector::from_vec(vec![0.0, f64::NEG_INFINITY]),
            DVector::from_vec(vec![-1.0, -1.0]),
            0.0,
        );
        assert!(bad_weight.is_err());
        let bad_len = SampleBatch::from_parts(
            points,
            DVector::from_vec(vec![0.0]),
            DVector::from_vec(vec![-1.0, -1.0]),
            0.0,
        );
        assert!(bad_len.is_err());
    }

    /// A target that vanishes everywhere except a tiny ball the wide initial
    /// draw essentially never hits.
    struct NeedleTarget;

    impl TargetDensity for NeedleTarget {
        fn dim(&self) -> usize {
            1
        }

        fn log_density(&self, x: &[f64]) -> f64 {
            if x[0].abs() < 1e-12 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
    }

    #[test]
    fn annealed_reports_hopeless_initialization() {
        let schedule = AnnealingSchedule::new(0.001, 0.999, 5, 0.025, 25.0).unwrap();
        let err = annealed_sample(&NeedleTarget, &schedule, 1, 0).unwrap_err();
        assert!(matches!(err, Error::InitialDrawRejected { .. }));
    }
}
