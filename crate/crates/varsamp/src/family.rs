//! The Gaussian exponential family in natural and moment form.
//!
//! Every approximating distribution in this crate is an *unnormalized*
//! Gaussian, written either as
//!
//! * natural parameters: `q(x) = exp(theta' phi(x))` where `phi` collects the
//!   quadratic monomials `(1, x_1, .., x_d, x_i x_j for i <= j)`, or
//! * moment parameters: a total mass `Z`, a mean vector `mu`, and a
//!   covariance matrix `Sigma`, meaning `q(x) = Z * N(x; mu, Sigma)`.
//!
//! The two forms are exchanged by [`natural_to_moments`] and
//! [`moments_to_natural`]. Not every natural parameter vector corresponds to
//! a normalizable density — the quadratic form must be negative definite —
//! so the moment direction returns a [`MomentsOutcome`] that is either
//! `Proper` or `Improper` rather than failing.
//!
//! [`generalized_kl`] evaluates the divergence used throughout the crate: the
//! Kullback-Leibler divergence extended to unnormalized densities,
//!
//! ```text
//! D(a || b) = int a log(a/b) - int a + int b,
//! ```
//!
//! which is nonnegative, zero iff `a = b`, and reduces to `Z_a` times the
//! classical KL divergence plus a mass-mismatch penalty.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub(crate) const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Relative tolerance for the symmetry check on covariance inputs.
const SYMMETRY_TOL: f64 = 1e-12;

/// The quadratic feature map `phi(x) = (1, x_1, .., x_d, x_i x_j for i <= j)`.
///
/// Feature `0` is the constant `1`, features `1..=d` are the coordinates, and
/// the remaining `d(d+1)/2` features are the products `x_i * x_j` for
/// `i <= j`, ordered row by row of the upper triangle:
/// `x_1 x_1, x_1 x_2, .., x_1 x_d, x_2 x_2, .., x_d x_d`.
///
/// ```
/// use varsamp::FeatureMap;
///
/// let fm = FeatureMap::new(2);
/// assert_eq!(fm.n_params(), 6);
/// let phi = fm.features(&[3.0, 5.0]).unwrap();
/// assert_eq!(phi.as_slice(), &[1.0, 3.0, 5.0, 9.0, 15.0, 25.0]);
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureMap {
    dim: usize,
}

impl FeatureMap {
    /// Creates the feature map for points in `dim` dimensions.
    ///
    /// # Panics
    ///
    /// Panics if `dim` is zero.
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "feature map needs at least one dimension");
        Self { dim }
    }

    /// Dimension of the points this map accepts.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of features: `1 + d + d(d+1)/2`.
    pub fn n_params(&self) -> usize {
        1 + self.dim + self.dim * (self.dim + 1) / 2
    }

    /// Position of the product feature `x_i * x_j` (`i <= j`) within the
    /// feature vector.
    pub(crate) fn pair_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= j && j < self.dim);
        1 + self.dim + i * self.dim - i * (i + 1) / 2 + j
    }

    /// Evaluates `phi(x)`.
    pub fn features(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut out = DVector::zeros(self.n_params());
        self.fill_features(x, &mut out);
        Ok(out)
    }

    pub(crate) fn fill_features(&self, x: &[f64], out: &mut DVector<f64>) {
        out[0] = 1.0;
        for (i, xi) in x.iter().enumerate() {
            out[1 + i] = *xi;
        }
        let mut idx = 1 + self.dim;
        for i in 0..self.dim {
            for j in i..self.dim {
                out[idx] = x[i] * x[j];
                idx += 1;
            }
        }
    }

    /// Stacks `phi(x_k)` for every point of `points` (one point per column)
    /// into an `n_params x N` matrix.
    pub fn feature_matrix(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if points.nrows() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: points.nrows(),
            });
        }
        let n = self.n_params();
        let mut phi = DMatrix::zeros(n, points.ncols());
        let mut scratch = DVector::zeros(n);
        for k in 0..points.ncols() {
            let x: Vec<f64> = points.column(k).iter().copied().collect();
            self.fill_features(&x, &mut scratch);
            phi.set_column(k, &scratch);
        }
        Ok(phi)
    }
}

/// Natural parameters `theta` of an unnormalized Gaussian
/// `q(x) = exp(theta' phi(x))`.
///
/// The layout follows [`FeatureMap`]: `theta[0]` is the log of the value at
/// the origin, `theta[1..=d]` multiplies the coordinates, and the tail holds
/// one coefficient per product `x_i x_j` with `i <= j`. A stored coefficient
/// `c_ij` contributes `c_ij * x_i * x_j` to the exponent, so the matrix `A`
/// of the quadratic form `x' A x` has `A_ii = c_ii` and
/// `A_ij = A_ji = c_ij / 2` off the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParams {
    dim: usize,
    theta: DVector<f64>,
}

impl NaturalParams {
    /// Wraps a coefficient vector laid out as described by `fm`.
    pub fn new(fm: &FeatureMap, theta: DVector<f64>) -> Result<Self> {
        if theta.len() != fm.n_params() {
            return Err(Error::DimensionMismatch {
                expected: fm.n_params(),
                got: theta.len(),
            });
        }
        Ok(Self {
            dim: fm.dim(),
            theta,
        })
    }

    /// Dimension of the underlying space.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The full coefficient vector.
    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    /// The constant coefficient (log-density at the origin).
    pub fn constant(&self) -> f64 {
        self.theta[0]
    }

    /// The linear coefficients as a length-`d` vector.
    pub fn linear(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim, (0..self.dim).map(|i| self.theta[1 + i]))
    }

    /// The symmetric matrix `A` of the quadratic form `x' A x`.
    pub fn quadratic_matrix(&self) -> DMatrix<f64> {
        let fm = FeatureMap::new(self.dim);
        let mut a = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in i..self.dim {
                let c = self.theta[fm.pair_index(i, j)];
                if i == j {
                    a[(i, i)] = c;
                } else {
                    a[(i, j)] = 0.5 * c;
                    a[(j, i)] = 0.5 * c;
                }
            }
        }
        a
    }

    /// Evaluates `log q(x) = theta' phi(x)`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let fm = FeatureMap::new(self.dim);
        let phi = fm.features(x)?;
        Ok(self.theta.dot(&phi))
    }
}

/// Moment parameters of a proper unnormalized Gaussian: total mass `Z > 0`,
/// mean `mu`, and a symmetric positive definite covariance `Sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    mass: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianMoments {
    /// Validates and wraps moment parameters.
    ///
    /// `mass` must be finite and positive, `cov` must be square with the same
    /// dimension as `mean`, symmetric to within a relative `1e-12`, and admit
    /// a Cholesky factorization. The stored covariance is the exactly
    /// symmetrized `(cov + cov') / 2`.
    pub fn new(mass: f64, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mass must be finite and positive, got {mass}"
            )));
        }
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidArgument("mean must be non-empty".into()));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.nrows().max(cov.ncols()),
            });
        }
        let scale = cov.amax().max(1.0);
        for i in 0..d {
            for j in (i + 1)..d {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::InvalidArgument(
                        "covariance is not symmetric".into(),
                    ));
                }
            }
        }
        let sym = 0.5 * (&cov + cov.transpose());
        if !sym.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "covariance has non-finite entries".into(),
            ));
        }
        if Cholesky::new(sym.clone()).is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("mean has non-finite entries".into()));
        }
        Ok(Self {
            mass,
            mean,
            cov: sym,
        })
    }

    /// The standard normal `N(0, I_d)` with unit mass.
    pub fn standard_normal(dim: usize) -> Self {
        Self::isotropic(dim, 1.0, 1.0).expect("standard normal is always valid")
    }

    /// An isotropic Gaussian `Z * N(0, variance * I_d)`.
    pub fn isotropic(dim: usize, mass: f64, variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "variance must be finite and positive, got {variance}"
            )));
        }
        Self::new(
            mass,
            DVector::zeros(dim),
            DMatrix::identity(dim, dim) * variance,
        )
    }

    /// Total mass `Z = int q`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Mean vector.
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Covariance matrix (symmetric positive definite).
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Dimension of the underlying space.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Serialize, Deserialize)]
struct MomentsWire {
    mass: f64,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl From<&GaussianMoments> for MomentsWire {
    fn from(m: &GaussianMoments) -> Self {
        MomentsWire {
            mass: m.mass,
            mean: m.mean.iter().copied().collect(),
            cov: (0..m.dim())
                .map(|i| (0..m.dim()).map(|j| m.cov[(i, j)]).collect())
                .collect(),
        }
    }
}

impl MomentsWire {
    fn validate(self) -> Result<GaussianMoments> {
        let d = self.mean.len();
        if self.cov.len() != d || self.cov.iter().any(|row| row.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.cov.len(),
            });
        }
        let cov = DMatrix::from_fn(d, d, |i, j| self.cov[i][j]);
        GaussianMoments::new(self.mass, DVector::from_vec(self.mean), cov)
    }
}

impl Serialize for GaussianMoments {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        MomentsWire::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GaussianMoments {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = MomentsWire::deserialize(deserializer)?;
        wire.validate().map_err(D::Error::custom)
    }
}

/// The result of converting natural parameters (or of running an estimator):
/// either a proper unnormalized Gaussian, or the marker that the quadratic
/// form was not negative definite so no normalizable density exists.
///
/// Serialized as the moment object itself when proper, and as
/// `{"improper": true}` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum MomentsOutcome {
    /// A normalizable density with the given moments.
    Proper(GaussianMoments),
    /// The parameters do not describe a normalizable density.
    Improper,
}

impl MomentsOutcome {
    /// Returns the moments when proper.
    pub fn proper(&self) -> Option<&GaussianMoments> {
        match self {
            MomentsOutcome::Proper(m) => Some(m),
            MomentsOutcome::Improper => None,
        }
    }

    /// True when no normalizable density exists.
    pub fn is_improper(&self) -> bool {
        matches!(self, MomentsOutcome::Improper)
    }
}

#[derive(Serialize, Deserialize)]
struct ImproperWire {
    improper: bool,
}

impl Serialize for MomentsOutcome {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MomentsOutcome::Proper(m) => m.serialize(serializer),
            MomentsOutcome::Improper => ImproperWire { improper: true }.serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for MomentsOutcome {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Wire {
            Improper(ImproperWire),
            Proper(MomentsWire),
        }
        match Wire::deserialize(deserializer)? {
            Wire::Improper(flag) => {
                if flag.improper {
                    Ok(MomentsOutcome::Improper)
                } else {
                    Err(D::Error::custom("\"improper\" must be true when present"))
                }
            }
            Wire::Proper(wire) => wire.validate().map(MomentsOutcome::Proper).map_err(D::Error::custom),
        }
    }
}

/// A prepared evaluator for `log q(x)` of a proper unnormalized Gaussian.
///
/// Factorizes the covariance once so that repeated evaluations cost one
/// triangular solve each. Both the Gaussian target model and the samplers
/// evaluate through this type, so a target that *is* the instrumental
/// distribution produces bitwise-identical log-densities on both sides.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    chol_l: DMatrix<f64>,
    log_scale: f64,
}

impl GaussianDensity {
    /// Prepares an evaluator for `moments`.
    pub fn new(moments: &GaussianMoments) -> Self {
        let chol = Cholesky::new(moments.cov().clone())
            .expect("GaussianMoments invariant guarantees a positive definite covariance");
        let chol_l = chol.l();
        let log_det: f64 = 2.0 * chol_l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let d = moments.dim() as f64;
        GaussianDensity {
            mean: moments.mean().clone(),
            chol_l,
            log_scale: moments.mass().ln() - 0.5 * d * LN_2PI - 0.5 * log_det,
        }
    }

    /// Dimension of the underlying space.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Evaluates `log(Z * N(x; mu, Sigma))`.
    ///
    /// # Panics
    ///
    /// Panics if `x.len()` differs from the dimension.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.mean.len(), "point has wrong dimension");
        let mut diff = DVector::from_row_slice(x);
        diff -= &self.mean;
        let u = self
            .chol_l
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has positive diagonal");
        self.log_scale - 0.5 * u.norm_squared()
    }

    pub(crate) fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub(crate) fn chol_l(&self) -> &DMatrix<f64> {
        &self.chol_l
    }
}

/// Converts natural parameters to moment form.
///
/// Writes the exponent as `theta0 + b'x + x'Ax` and requires the precision
/// `Lambda = -2A` to be positive definite; then
///
/// ```text
/// Sigma = Lambda^-1,   mu = Lambda^-1 b,
/// Z = exp(theta0 + b'mu/2) (2 pi)^(d/2) det(Lambda)^(-1/2).
/// ```
///
/// When `Lambda` has no Cholesky factorization — or the mass overflows or
/// underflows past the representable range — the outcome is `Improper`.
pub fn natural_to_moments(params: &NaturalParams) -> MomentsOutcome {
    let d = params.dim();
    let lambda = -2.0 * params.quadratic_matrix();
    let Some(chol) = Cholesky::new(lambda) else {
        return MomentsOutcome::Improper;
    };
    let b = params.linear();
    let mu = chol.solve(&b);
    let log_det_lambda: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_mass =
        params.constant() + 0.5 * b.dot(&mu) + 0.5 * d as f64 * LN_2PI - 0.5 * log_det_lambda;
    let mass = log_mass.exp();
    let mut cov = chol.inverse();
    cov = 0.5 * (&cov + cov.transpose());
    match GaussianMoments::new(mass, mu, cov) {
        Ok(m) => MomentsOutcome::Proper(m),
        Err(_) => MomentsOutcome::Improper,
    }
}

/// Converts moment parameters to natural form. Inverse of
/// [`natural_to_moments`] on proper inputs.
pub fn moments_to_natural(fm: &FeatureMap, moments: &GaussianMoments) -> Result<NaturalParams> {
    if fm.dim() != moments.dim() {
        return Err(Error::DimensionMismatch {
            expected: fm.dim(),
            got: moments.dim(),
        });
    }
    let d = moments.dim();
    let chol = Cholesky::new(moments.cov().clone()).ok_or(Error::NotPositiveDefinite)?;
    let lambda = chol.inverse();
    let b = &lambda * moments.mean();
    let log_det_lambda: f64 = -2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let theta0 = moments.mass().ln() - 0.5 * moments.mean().dot(&b) - 0.5 * d as f64 * LN_2PI
        + 0.5 * log_det_lambda;

    let mut theta = DVector::zeros(fm.n_params());
    theta[0] = theta0;
    for i in 0..d {
        theta[1 + i] = b[i];
    }
    for i in 0..d {
        for j in i..d {
            let a_ij = -0.5 * 0.5 * (lambda[(i, j)] + lambda[(j, i)]);
            theta[fm.pair_index(i, j)] = if i == j { a_ij } else { 2.0 * a_ij };
        }
    }
    NaturalParams::new(fm, theta)
}

/// The generalized Kullback-Leibler divergence
/// `D(a || b) = int a log(a/b) - int a + int b` between two proper
/// unnormalized Gaussians.
///
/// In moment form this evaluates to
///
/// ```text
/// D(a || b) = Z_a [ log(Z_a / Z_b)
///                   + (log det(S_b) - log det(S_a)
///                      + tr(S_b^-1 S_a)
///                      + (m_a - m_b)' S_b^-1 (m_a - m_b) - d) / 2 ]
///             - Z_a + Z_b.
/// ```
///
/// The result is nonnegative; rounding noise below `1e-12` of the operand
/// scale is clamped to zero.
///
/// # Panics
///
/// Panics if the two distributions do not share a dimension.
pub fn generalized_kl(a: &GaussianMoments, b: &GaussianMoments) -> f64 {
    assert_eq!(a.dim(), b.dim(), "divergence needs a common dimension");
    let d = a.dim() as f64;
    let chol_a = Cholesky::new(a.cov().clone()).expect("proper moments are positive definite");
    let chol_b = Cholesky::new(b.cov().clone()).expect("proper moments are positive definite");
    let l_a = chol_a.l();
    let l_b = chol_b.l();
    let log_det_a: f64 = 2.0 * l_a.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_det_b: f64 = 2.0 * l_b.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    // tr(S_b^-1 S_a) = || L_b^-1 L_a ||_F^2
    let w = l_b
        .solve_lower_triangular(&l_a)
        .expect("Cholesky factor has positive diagonal");
    let trace = w.norm_squared();
    // (m_a - m_b)' S_b^-1 (m_a - m_b) = || L_b^-1 (m_a - m_b) ||^2
    let diff = a.mean() - b.mean();
    let u = l_b
        .solve_lower_triangular(&diff)
        .expect("Cholesky factor has positive diagonal");
    let quad = u.norm_squared();

    let za = a.mass();
    let zb = b.mass();
    let kl = za * ((za / zb).ln() + 0.5 * (log_det_b - log_det_a + trace + quad - d)) - za + zb;
    let scale = za.abs().max(zb.abs()).max(1.0);
    if kl < 0.0 && kl > -1e-12 * scale {
        0.0
    } else {
        kl
    }
}

/// Integrals of every feature under a proper unnormalized Gaussian:
/// `int q = Z`, `int x_i q = Z mu_i`, and
/// `int x_i x_j q = Z (Sigma_ij + mu_i mu_j)`.
pub fn feature_integrals(fm: &FeatureMap, moments: &GaussianMoments) -> Result<DVector<f64>> {
    if fm.dim() != moments.dim() {
        return Err(Error::DimensionMismatch {
            expected: fm.dim(),
            got: moments.dim(),
        });
    }
    let d = fm.dim();
    let mut out = DVector::zeros(fm.n_params());
    let z = moments.mass();
    out[0] = z;
    for i in 0..d {
        out[1 + i] = z * moments.mean()[i];
    }
    for i in 0..d {
        for j in i..d {
            out[fm.pair_index(i, j)] =
                z * (moments.cov()[(i, j)] + moments.mean()[i] * moments.mean()[j]);
        }
    }
    Ok(out)
}
