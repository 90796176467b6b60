//! Numerical oracles for the test suites.
//!
//! Everything here is deliberately independent of the library under test:
//! integrals come from textbook adaptive Simpson quadrature and derivatives
//! from finite differences, so agreement with the library is evidence, not
//! tautology. This crate appears only in `dev-dependencies`.

use nalgebra::{DMatrix, DVector};

/// How many uniform panels [`integrate`] splits the interval into before
/// adapting. A sharply peaked integrand on a wide interval can fool a purely
/// recursive rule into "converging" on a handful of near-zero probes; a
/// fixed initial grid guarantees the peak is seen.
const INITIAL_PANELS: usize = 64;

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance
/// `tol`: a fixed uniform split into panels, then recursive Simpson with
/// Richardson extrapolation inside each.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let width = (b - a) / INITIAL_PANELS as f64;
    (0..INITIAL_PANELS)
        .map(|i| {
            let lo = a + i as f64 * width;
            adaptive_panel(f, lo, lo + width, tol / INITIAL_PANELS as f64)
        })
        .sum()
}

fn adaptive_panel(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }

    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Two-dimensional integral of `f` over an axis-aligned rectangle, as nested
/// adaptive Simpson passes.
pub fn integrate_2d(
    f: &dyn Fn(f64, f64) -> f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
    tol: f64,
) -> f64 {
    let inner_tol = tol / (10.0 * (x_range.1 - x_range.0).abs().max(1.0));
    integrate(
        &|x| integrate(&|y| f(x, y), y_range.0, y_range.1, inner_tol),
        x_range.0,
        x_range.1,
        tol,
    )
}

/// Central-difference gradient of `f` at `x`. The step for coordinate `i` is
/// `h * max(1, |x_i|)`.
pub fn fd_gradient(f: &dyn Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let n = x.len();
    DVector::from_fn(n, |i, _| {
        let hi = h * x[i].abs().max(1.0);
        let mut plus = x.clone();
        plus[i] += hi;
        let mut minus = x.clone();
        minus[i] -= hi;
        (f(&plus) - f(&minus)) / (2.0 * hi)
    })
}

/// Value-only central-difference Hessian of `f` at `x` (four-point stencil
/// off the diagonal, three-point on it).
pub fn fd_hessian(f: &dyn Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = x.len();
    let step = |i: usize| h * x[i].abs().max(1.0);
    let mut out = DMatrix::zeros(n, n);
    let f0 = f(x);
    for i in 0..n {
        let hi = step(i);
        let mut p = x.clone();
        p[i] += hi;
        let mut m = x.clone();
        m[i] -= hi;
        out[(i, i)] = (f(&p) - 2.0 * f0 + f(&m)) / (hi * hi);
        for j in (i + 1)..n {
            let hj = step(j);
            let mut pp = x.clone();
            pp[i] += hi;
            pp[j] += hj;
            let mut pm = x.clone();
            pm[i] += hi;
            pm[j] -= hj;
            let mut mp = x.clone();
            mp[i] -= hi;
            mp[j] += hj;
            let mut mm = x.clone();
            mm[i] -= hi;
            mm[j] -= hj;
            let v = (f(&pp) - f(&pm) - f(&mp) + f(&mm)) / (4.0 * hi * hj);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Mean and (unbiased) standard deviation of a sample.
pub fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Median of a sample (midpoint of the two central order statistics for
/// even lengths). Infinities participate like any other value.
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of an empty sample");
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in medians"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}
