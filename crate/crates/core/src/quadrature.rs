//! Adaptive Simpson quadrature on finite intervals.

use crate::error::{Error, Result};

/// Absolute tolerance used for Lévy-measure integrals.
pub const DEFAULT_TOL: f64 = 1e-10;

const MAX_DEPTH: u32 = 48;

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Returns 0 for empty or reversed intervals.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(b > a) {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    let value = recurse(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)?;
    if !value.is_finite() {
        return Err(Error::numeric(
            "quadrature",
            format!("non-finite integral over [{a}, {b}) with tol {tol:e}"),
        ));
    }
    Ok(value)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 || !(delta.is_finite()) {
        return Err(Error::numeric(
            "quadrature",
            format!("adaptive Simpson did not converge on [{a}, {b}) (tol {tol:e}, residual {delta:e})"),
        ));
    }
    let l = recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
    let r = recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
    Ok(l + r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = adaptive_simpson(|x| 3.0 * x * x + 1.0, -1.0, 2.0, 1e-12).unwrap();
        assert!((v - 12.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_function() {
        let v = adaptive_simpson(f64::exp, 0.0, 1.0, 1e-12).unwrap();
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-11);
    }

    #[test]
    fn empty_and_reversed() {
        assert_eq!(adaptive_simpson(|_| 1.0, 0.4, 0.4, 1e-10).unwrap(), 0.0);
        assert_eq!(adaptive_simpson(|_| 1.0, 0.5, 0.4, 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn nan_integrand_is_an_error() {
        assert!(adaptive_simpson(|_| f64::NAN, 0.0, 1.0, 1e-10).is_err());
    }
}
