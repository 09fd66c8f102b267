//! Numerically stable scalar kernels shared by the criteria.
//!
//! Everything here is written against `expm1`/`ln_1p` so that gradients can
//! be evaluated arbitrarily close to a zero dose without 0/0 trouble, and so
//! that large `lambda * x` products underflow to zero cleanly instead of
//! overflowing.

use std::sync::OnceLock;

use crate::scalar;

/// `r(y) = y^2 e^-y / (1 - e^-y) = y^2 / (e^y - 1)`, extended by `r(0) = 0`.
///
/// Strictly concave on `[0, y_max]` with a unique maximizer [`y_max`].
/// Returns 0 for `y > 700` where `e^y` would overflow.
pub fn r_kernel(y: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else if y < 1e-8 {
        y / (1.0 + 0.5 * y)
    } else if y > 700.0 {
        0.0
    } else {
        y * y / y.exp_m1()
    }
}

/// `ln r(y)`, finite for all `y > 0` (unlike `r_kernel().ln()` once the
/// kernel underflows).
pub fn r_kernel_log(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    if y < 1e-8 {
        y.ln() - 0.5 * y
    } else {
        2.0 * y.ln() - ln_expm1(y)
    }
}

/// The maximizer of `r`, about 1.59362.
pub fn y_max() -> f64 {
    static YMAX: OnceLock<f64> = OnceLock::new();
    *YMAX.get_or_init(|| {
        // golden section resolves the flat top to ~sqrt(eps); a few Newton
        // steps on the stationarity equation y = 2(1 - e^-y) finish the job
        let mut y = scalar::golden_section_max(r_kernel, 0.5, 3.0, 1e-10).0;
        for _ in 0..8 {
            let s = 2.0 * (1.0 - (-y).exp()) - y;
            let ds = 2.0 * (-y).exp() - 1.0;
            y -= s / ds;
        }
        y
    })
}

/// Fisher-information gradient kernel
/// `g1(x; lambda) = x^2 e^{-lambda x}/(1 - e^{-lambda x}) = lambda^-2 r(lambda x)`.
pub fn g1(x: f64, lambda: f64) -> f64 {
    let y = lambda * x;
    if x <= 0.0 || y <= 0.0 {
        0.0
    } else if y < 1e-8 {
        x * x / (y * (1.0 + 0.5 * y))
    } else if y > 700.0 {
        0.0
    } else {
        x * x / y.exp_m1()
    }
}

/// `ln g1(x; lambda)`, finite wherever `x, lambda > 0`.
pub fn g1_log(x: f64, lambda: f64) -> f64 {
    debug_assert!(x > 0.0 && lambda > 0.0);
    2.0 * x.ln() - ln_expm1(lambda * x)
}

/// `ln(e^y - 1)` without overflow or cancellation.
pub fn ln_expm1(y: f64) -> f64 {
    if y < 1e-8 {
        y.ln() + 0.5 * y
    } else if y > 36.0 {
        // e^y - 1 ~ e^y; the correction ln(1 - e^-y) keeps full precision.
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

/// `ln(1 - e^-y)` for `y > 0`; tends to 0 from below as y grows.
pub fn ln1mexp(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    if y < std::f64::consts::LN_2 {
        (-(-y).exp_m1()).ln()
    } else {
        (-(-y).exp()).ln_1p()
    }
}

/// Numerically stable `ln(sum(exp(v)))`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_kernel_limits_and_values() {
        assert_eq!(r_kernel(0.0), 0.0);
        assert_eq!(r_kernel(-1.0), 0.0);
        // r(1) = 1/(e - 1)
        assert!((r_kernel(1.0) - 0.581976706869326).abs() < 1e-14);
        assert_eq!(r_kernel(701.0), 0.0);
        // continuity across the series cutoff (r(y) ~ y there)
        let a = r_kernel(1e-8 * 0.999);
        let b = r_kernel(1e-8 * 1.001);
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn y_max_matches_stationarity() {
        let y = y_max();
        assert!((y - 1.59362).abs() < 1e-4);
        // stationary point of r solves y = 2(1 - e^-y)
        assert!((y - 2.0 * (1.0 - (-y).exp())).abs() < 1e-10);
        // unimodality at the top
        assert!(r_kernel(y - 1e-6) < r_kernel(y));
        assert!(r_kernel(y + 1e-6) < r_kernel(y));
    }

    #[test]
    fn g1_is_scaled_r() {
        for &(x, lam) in &[(0.01, 50.0), (0.3, 2.0), (1.0, 0.5), (1e-6, 1e3)] {
            let lhs = g1(x, lam);
            let rhs = r_kernel(lam * x) / (lam * lam);
            assert!(
                ((lhs - rhs) / rhs.max(1e-300)).abs() < 1e-12,
                "x={x} lam={lam}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn log_forms_agree_with_direct() {
        for &y in &[1e-9, 1e-5, 0.1, 1.0, 10.0, 35.0, 40.0, 300.0] {
            let direct = if y < 700.0 { (y as f64).exp_m1().ln() } else { f64::INFINITY };
            if direct.is_finite() {
                assert!(
                    (ln_expm1(y) - direct).abs() < 1e-9 * direct.abs().max(1.0),
                    "y={y}"
                );
            }
            let d2 = (1.0 - (-y as f64).exp()).ln();
            if d2.is_finite() && y > 1e-7 {
                assert!((ln1mexp(y) - d2).abs() < 1e-10 * d2.abs().max(1.0));
            }
        }
        assert!((r_kernel_log(2.0) - r_kernel(2.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_basic() {
        let v = [0.0_f64.ln(), 1.0, 2.0];
        let direct = (0.0 + 1.0_f64.exp() + 2.0_f64.exp()).ln();
        assert!((logsumexp(&v) - direct).abs() < 1e-12);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }
}
