//! Adaptive Simpson quadrature for smooth one-dimensional integrands.

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 50;

/// Integrates `f` over `[a, b]` to relative tolerance `rel_tol`.
///
/// The absolute floor `1e-300` keeps integrals that are exactly zero from
/// recursing forever. Reversed limits flip the sign. A non-finite value at an
/// endpoint (a removable singularity such as `0/0`) is replaced by the value
/// just inside the interval.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if a == b {
        return Ok(0.0);
    }
    if a > b {
        return adaptive_simpson(f, b, a, rel_tol).map(|v| -v);
    }
    let inset = 1e-12 * (b - a);
    let fa = finite_or(f(a), || f(a + inset));
    let fb = finite_or(f(b), || f(b - inset));
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // a coarse scale for the absolute part of the stopping rule
    let scale = whole.abs().max(
        (b - a) * (fa.abs() + fm.abs() + fb.abs()) / 3.0,
    );
    let tol = (rel_tol * scale).max(1e-300);
    let mut failed = false;
    let value = recurse(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH, &mut failed);
    if failed || !value.is_finite() {
        return Err(Error::QuadratureFailure { a, b });
    }
    Ok(value)
}

fn finite_or(v: f64, inside: impl FnOnce() -> f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        inside()
    }
}

#[allow(clippy::too_many_arguments)]
fn recurse<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    failed: &mut bool,
) -> f64
where
    F: Fn(f64) -> f64,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || (m - a) <= f64::EPSILON * m.abs().max(1.0) {
        return left + right + delta / 15.0;
    }
    if depth == 0 {
        *failed = true;
        return left + right;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, failed)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, failed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = adaptive_simpson(|x| x * x * x - 2.0 * x, -1.0, 3.0, 1e-12).unwrap();
        // antiderivative x^4/4 - x^2
        let exact = (81.0 / 4.0 - 9.0) - (0.25 - 1.0);
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn reversed_limits_negate() {
        let a = adaptive_simpson(f64::exp, 0.0, 1.0, 1e-12).unwrap();
        let b = adaptive_simpson(f64::exp, 1.0, 0.0, 1e-12).unwrap();
        assert_eq!(a, -b);
        assert!((a - (std::f64::consts::E - 1.0)).abs() < 1e-11);
    }
}
