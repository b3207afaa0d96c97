//! Gaussian special functions, truncated-moment integrals and adaptive
//! quadrature shared by the bound, codec and analysis modules.

use libm::erfc;
use thiserror::Error;

/// `1/sqrt(2*pi)`.
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal pdf.
#[inline]
pub fn phi(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Normal pdf with mean `mu` and variance `var`.
#[inline]
pub fn normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
    let s = var.sqrt();
    phi((x - mu) / s) / s
}

/// Standard normal cdf.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Gaussian tail probability Q(x) = 1 - Phi(x).
#[inline]
pub fn q_func(x: f64) -> f64 {
    0.5 * erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Probability that a zero-mean normal with std `sigma` lands in `(a, b]`.
pub fn normal_interval_prob(a: f64, b: f64, sigma: f64) -> f64 {
    debug_assert!(b >= a);
    let lo = if a == f64::NEG_INFINITY { 0.0 } else { norm_cdf(a / sigma) };
    let hi = if b == f64::INFINITY { 1.0 } else { norm_cdf(b / sigma) };
    (hi - lo).max(0.0)
}

/// `int_a^b (x - c)^2 phi_sigma(x) dx` for a zero-mean normal with std
/// `sigma`. Either limit may be infinite.
pub fn truncated_sq_err(a: f64, b: f64, c: f64, sigma: f64) -> f64 {
    let al = a / sigma;
    let be = b / sigma;
    let (pa, fa) = if al == f64::NEG_INFINITY {
        (0.0, 0.0)
    } else {
        (norm_cdf(al), phi(al))
    };
    let (pb, fb) = if be == f64::INFINITY {
        (1.0, 0.0)
    } else {
        (norm_cdf(be), phi(be))
    };
    let i0 = (pb - pa).max(0.0);
    // int x phi_sigma = sigma * (phi(al) - phi(be))
    let i1 = sigma * (fa - fb);
    // int x^2 phi_sigma = sigma^2 * (I0 + al*phi(al) - be*phi(be))
    let afa = if al.is_finite() { al * fa } else { 0.0 };
    let bfb = if be.is_finite() { be * fb } else { 0.0 };
    let i2 = sigma * sigma * (i0 + afa - bfb);
    i2 - 2.0 * c * i1 + c * c * i0
}

/// Mean of a zero-mean normal with std `sigma` truncated to `(a, b]`,
/// conditioned on landing there. Returns the cell midpoint when the cell
/// probability underflows.
pub fn truncated_mean(a: f64, b: f64, mu: f64, sigma: f64) -> f64 {
    let al = (a - mu) / sigma;
    let be = (b - mu) / sigma;
    let pa = if al == f64::NEG_INFINITY { 0.0 } else { norm_cdf(al) };
    let pb = if be == f64::INFINITY { 1.0 } else { norm_cdf(be) };
    let p = pb - pa;
    if p <= 1e-300 {
        return 0.5 * (a.max(mu - 8.0 * sigma) + b.min(mu + 8.0 * sigma));
    }
    let fa = if al == f64::NEG_INFINITY { 0.0 } else { phi(al) };
    let fb = if be == f64::INFINITY { 0.0 } else { phi(be) };
    mu + sigma * (fa - fb) / p
}

#[derive(Debug, Error, PartialEq)]
pub enum QuadError {
    #[error("adaptive quadrature did not converge to tolerance {tol} (best error {err})")]
    NoConvergence { tol: f64, err: f64 },
}

const MAX_DEPTH: u32 = 48;

/// Adaptive Simpson quadrature with absolute tolerance `tol` on `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64, QuadError> {
    if a == b {
        return Ok(0.0);
    }
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(a, b, fa, fm, fb);
    let mut worst = 0.0f64;
    let v = adaptive(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH, &mut worst);
    if worst > tol.max(1e-300) * 16.0 {
        return Err(QuadError::NoConvergence { tol, err: worst });
    }
    Ok(v)
}

#[inline]
fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    worst: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let err = (left + right - whole).abs();
    if err <= 15.0 * tol || depth == 0 {
        if depth == 0 {
            *worst = worst.max(err / 15.0);
        }
        left + right + (left + right - whole) / 15.0
    } else {
        adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, worst)
            + adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, worst)
    }
}

/// `int_a^inf f`, for integrands with Gaussian-type decay on the scale
/// `scale`. The tail beyond `a + 40*scale` is treated as zero.
pub fn integrate_tail<F: Fn(f64) -> f64>(f: F, a: f64, scale: f64, tol: f64) -> Result<f64, QuadError> {
    let b = a + 40.0 * scale.max(1e-12);
    integrate(f, a, b, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cdf_pdf_consistency() {
        assert_relative_eq!(norm_cdf(0.0), 0.5, max_relative = 1e-15);
        assert_relative_eq!(q_func(1.0), 0.15865525393145707, max_relative = 1e-12);
        assert_relative_eq!(phi(0.0), INV_SQRT_2PI, max_relative = 1e-15);
    }

    #[test]
    fn simpson_integrates_gaussian_mass() {
        let v = integrate(|x| phi(x), -10.0, 10.0, 1e-12).unwrap();
        assert_relative_eq!(v, 1.0, max_relative = 1e-10);
    }

    #[test]
    fn truncated_sq_err_matches_quadrature() {
        let sigma = 1.3;
        let cases = [(-0.7, 1.1, 0.2), (0.5, 2.5, 1.4), (-3.0, -1.0, -2.0)];
        for &(a, b, c) in &cases {
            let closed = truncated_sq_err(a, b, c, sigma);
            let quad = integrate(|x| (x - c).powi(2) * normal_pdf(x, 0.0, sigma * sigma), a, b, 1e-13).unwrap();
            assert_relative_eq!(closed, quad, max_relative = 1e-9);
        }
        // semi-infinite upper limit
        let closed = truncated_sq_err(1.0, f64::INFINITY, 1.5, sigma);
        let quad = integrate(|x| (x - 1.5).powi(2) * normal_pdf(x, 0.0, sigma * sigma), 1.0, 40.0, 1e-13).unwrap();
        assert_relative_eq!(closed, quad, max_relative = 1e-9);
    }

    #[test]
    fn truncated_mean_pulls_toward_density() {
        // positive cell of a zero-mean normal: conditional mean below midpoint
        let m = truncated_mean(1.0, 2.0, 0.0, 1.0);
        assert!(m > 1.0 && m < 1.5);
        // symmetric cell around 0 has mean 0
        let m0 = truncated_mean(-1.0, 1.0, 0.0, 1.0);
        assert!(m0.abs() < 1e-14);
    }
}
