//! One-dimensional search helpers: golden-section maximization with a
//! coarse bracketing scan, and plain bisection for monotone root finding.

use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section maximization of a unimodal `f` on `[lo, hi]`.
/// Returns `(argmax, max)` with the argmax located to within `xtol`.
pub fn golden_section_max<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, xtol: f64) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > xtol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Maximize `f` on `[lo, hi]` by a log-spaced coarse scan followed by
/// golden-section refinement around the best scan point. Suited to
/// objectives that are extremely flat near zero.
pub fn maximize_scanned<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    scan_points: usize,
    xtol: f64,
) -> Result<(f64, f64)> {
    assert!(lo > 0.0 && hi > lo && scan_points >= 3);
    let ratio = (hi / lo).powf(1.0 / (scan_points - 1) as f64);
    let xs: Vec<f64> = (0..scan_points)
        .map(|i| (lo * ratio.powi(i as i32)).min(hi))
        .collect();
    let vals: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut best = 0;
    for (i, v) in vals.iter().enumerate() {
        if *v > vals[best] {
            best = i;
        }
    }
    if !vals[best].is_finite() {
        return Err(Error::DegenerateObjective(
            "objective not finite anywhere on the search range".into(),
        ));
    }
    let spread = vals
        .iter()
        .filter(|v| v.is_finite())
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
        - vals
            .iter()
            .filter(|v| v.is_finite())
            .cloned()
            .fold(f64::INFINITY, f64::min);
    if spread <= 0.0 {
        return Err(Error::DegenerateObjective(
            "objective is flat on the search range".into(),
        ));
    }
    let a = if best == 0 { xs[0] } else { xs[best - 1] };
    let b = if best + 1 == xs.len() {
        xs[best]
    } else {
        xs[best + 1]
    };
    Ok(golden_section_max(f, a, b, xtol))
}

/// Bisection root of a monotone decreasing `f` on `[lo, hi]` to `xtol`.
pub fn bisect_decreasing<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, xtol: f64) -> Result<f64> {
    let flo = f(lo);
    let fhi = f(hi);
    if flo < 0.0 || fhi > 0.0 {
        return Err(Error::BracketFailure(format!(
            "no sign change on [{lo}, {hi}]: f(lo)={flo:.6e}, f(hi)={fhi:.6e}"
        )));
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > xtol {
        let mid = 0.5 * (a + b);
        if f(mid) >= 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, v) = golden_section_max(|x| -(x - 0.3).powi(2), 0.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn scan_handles_flat_left_tail() {
        // peak at 0.5 but essentially flat below 1e-3
        let f = |x: f64| -(x.ln() - 0.5_f64.ln()).powi(2);
        let (x, _) = maximize_scanned(f, 1e-6, 1.0, 200, 1e-10).unwrap();
        assert!((x - 0.5).abs() < 1e-7);
    }

    #[test]
    fn bisect_root() {
        let r = bisect_decreasing(|x| 2.0 - x, 0.0, 10.0, 1e-9).unwrap();
        assert!((r - 2.0).abs() < 1e-8);
        assert!(bisect_decreasing(|x| -1.0 - x, 0.0, 10.0, 1e-9).is_err());
    }
}
