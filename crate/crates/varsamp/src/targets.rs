//! Target densities to be summarized by the estimators.
//!
//! A target is anything that can report its (possibly unnormalized) log
//! density at a point. The estimators never need gradients of the target,
//! only values, so the trait is deliberately small.
//!
//! Two concrete families are provided:
//!
//! * [`ExpPowerTarget`] — products of exponential-power (generalized
//!   Gaussian) coordinates, scaled to unit variance. The shape `beta` sweeps
//!   from heavy tails (`beta < 2`) through the standard normal (`beta = 2`)
//!   to nearly-uniform boxes (`beta > 2`), which makes the family a good
//!   stress test: the Gaussian approximation is exact at `beta = 2` and
//!   increasingly wrong away from it.
//! * [`GaussianTarget`] — an unnormalized Gaussian, mostly useful for
//!   calibration runs where the true moments are known.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::family::{GaussianDensity, GaussianMoments};

/// An unnormalized target density `p` on `R^d`.
///
/// Implementations must return `-inf` (never `NaN`) where the density
/// vanishes and finite values elsewhere. `log_density` may assume — and may
/// assert — that `x.len() == self.dim()`; use [`log_density_at`] for a
/// checked call.
pub trait TargetDensity: Send + Sync {
    /// Dimension of the space the target lives on.
    fn dim(&self) -> usize;

    /// Log of the unnormalized density at `x` (length `self.dim()`).
    fn log_density(&self, x: &[f64]) -> f64;

    /// True moments `(Z, mu, Sigma)` when they are known in closed form.
    fn reference_moments(&self) -> Option<GaussianMoments> {
        None
    }
}

/// Dimension-checked wrapper around [`TargetDensity::log_density`].
pub fn log_density_at(target: &dyn TargetDensity, x: &[f64]) -> Result<f64> {
    if x.len() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: x.len(),
        });
    }
    let v = target.log_density(x);
    debug_assert!(!v.is_nan(), "target log-density must never be NaN");
    Ok(v)
}

/// A product of unit-variance exponential-power coordinates,
///
/// ```text
/// p(x) = prod_i  beta / (2 alpha Gamma(1/beta)) * exp(-|x_i / alpha|^beta),
/// ```
///
/// with the scale `alpha = sqrt(Gamma(1/beta) / Gamma(3/beta))` chosen so
/// every coordinate has variance one. The density integrates to one, its
/// mean is zero, so the true moments are `(1, 0, I_d)` for every shape.
///
/// `beta = 1` is the Laplace distribution, `beta = 2` the standard normal
/// (`alpha = sqrt(2)`), and `beta -> inf` approaches the uniform box.
///
/// ```
/// use varsamp::{ExpPowerTarget, TargetDensity};
///
/// let normal = ExpPowerTarget::new(1, 2.0).unwrap();
/// let expected = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5;
/// assert!((normal.log_density(&[1.0]) - expected).abs() < 1e-12);
/// ```
#[derive(Debug, Clone)]
pub struct ExpPowerTarget {
    dim: usize,
    beta: f64,
    alpha: f64,
    log_norm: f64,
}

impl ExpPowerTarget {
    /// Creates the target on `R^dim` with shape `beta > 0`.
    pub fn new(dim: usize, beta: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "target needs at least one dimension".into(),
            ));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "shape must be finite and positive, got {beta}"
            )));
        }
        let alpha = (0.5 * (ln_gamma(1.0 / beta) - ln_gamma(3.0 / beta))).exp();
        // log of the per-coordinate constant beta / (2 alpha Gamma(1/beta)).
        let log_c = beta.ln() - 2.0f64.ln() - alpha.ln() - ln_gamma(1.0 / beta);
        Ok(Self {
            dim,
            beta,
            alpha,
            log_norm: dim as f64 * log_c,
        })
    }

    /// The shape parameter.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// The per-coordinate scale that yields unit variance.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl TargetDensity for ExpPowerTarget {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim, "point has wrong dimension");
        let tail: f64 = x.iter().map(|xi| (xi / self.alpha).abs().powf(self.beta)).sum();
        self.log_norm - tail
    }

    fn reference_moments(&self) -> Option<GaussianMoments> {
        Some(GaussianMoments::standard_normal(self.dim))
    }
}

/// An unnormalized Gaussian used as a target, evaluated through the same
/// [`GaussianDensity`] code path as the samplers.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    moments: GaussianMoments,
    pdf: GaussianDensity,
}

impl GaussianTarget {
    /// Wraps the given moments as a target.
    pub fn new(moments: GaussianMoments) -> Self {
        let pdf = GaussianDensity::new(&moments);
        Self { moments, pdf }
    }

    /// The exact moments of this target.
    pub fn moments(&self) -> &GaussianMoments {
        &self.moments
    }
}

impl TargetDensity for GaussianTarget {
    fn dim(&self) -> usize {
        self.moments.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.pdf.log_density(x)
    }

    fn reference_moments(&self) -> Option<GaussianMoments> {
        Some(self.moments.clone())
    }
}
