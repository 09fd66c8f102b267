//! Quadrature building blocks: adaptive Gauss–Kronrod on finite intervals
//! and generalized Gauss–Laguerre rules for Gamma-weighted expectations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accuracy knobs shared by every integral in the crate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    /// Absolute error target.
    pub tol: f64,
    /// Maximum bisection depth of the adaptive rule.
    pub max_depth: u32,
    /// Node count for Gauss–Laguerre Gamma expectations.
    pub laguerre_nodes: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            tol: 1e-9,
            max_depth: 60,
            laguerre_nodes: 128,
        }
    }
}

// 7-point Gauss / 15-point Kronrod pair on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_813,
    0.949_107_912_342_759,
    0.864_864_423_359_769,
    0.741_531_185_599_394,
    0.586_087_235_467_691,
    0.405_845_151_377_397,
    0.207_784_955_007_898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529,
    0.063_092_092_629_979,
    0.104_790_010_322_250,
    0.140_653_259_715_525,
    0.169_004_726_639_267,
    0.190_350_578_064_785,
    0.204_432_940_075_298,
    0.209_482_141_084_728,
];
const WG: [f64; 4] = [
    0.129_484_966_168_870,
    0.279_705_391_489_277,
    0.381_830_050_505_119,
    0.417_959_183_673_469,
];

/// One Gauss–Kronrod panel: returns (integral, error estimate).
fn kronrod_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let fs = f(c - x) + f(c + x);
        k += WGK[i] * fs;
        if i % 2 == 1 {
            g += WG[i / 2] * fs;
        }
    }
    let integral = k * h;
    let err = ((k - g) * h).abs();
    (integral, err)
}

/// Adaptive Gauss–Kronrod integration of `f` over `[a, b]` to absolute
/// tolerance `tol`: globally adaptive, always refining the panel with the
/// largest error estimate. Errors out if the error target cannot be met.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: u32,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    struct Panel {
        lo: f64,
        hi: f64,
        val: f64,
        err: f64,
    }
    let new_panel = |lo: f64, hi: f64| -> Result<Panel> {
        let (val, err) = kronrod_panel(f, lo, hi);
        if !val.is_finite() {
            return Err(Error::QuadratureNonConvergent(format!(
                "non-finite integrand on [{lo}, {hi}]"
            )));
        }
        Ok(Panel { lo, hi, val, err })
    };
    let max_panels = (max_depth as usize).saturating_mul(50).max(200);
    let mut panels = vec![new_panel(a, b)?];
    loop {
        let total_err: f64 = panels.iter().map(|p| p.err).sum();
        if total_err <= tol {
            return Ok(panels.iter().map(|p| p.val).sum());
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.total_cmp(&y.1.err))
            .map(|(i, _)| i)
            .unwrap();
        let Panel { lo, hi, .. } = panels[worst];
        let width_floor = (hi - lo).abs() <= f64::EPSILON * lo.abs().max(hi.abs()).max(1e-12);
        if panels.len() >= max_panels || width_floor {
            return Err(Error::QuadratureNonConvergent(format!(
                "total error {total_err:.3e} above tolerance {tol:.3e} \
                 after {} panels on [{a}, {b}]",
                panels.len()
            )));
        }
        let mid = 0.5 * (lo + hi);
        panels[worst] = new_panel(lo, mid)?;
        panels.push(new_panel(mid, hi)?);
    }
}

/// Nodes and normalized weights `(t_i, w_i)` of the generalized
/// Gauss–Laguerre rule with weight `t^(alpha-1) e^-t`, scaled so the
/// weights sum to one. With these, `E[f]` under Gamma(alpha, beta) is
/// `sum_i w_i f(t_i / beta)`.
///
/// Computed by the Golub–Welsch eigendecomposition of the Jacobi matrix;
/// the probabilist normalization keeps the weights free of Gamma-function
/// factors, so large `alpha` cannot overflow.
pub fn gauss_laguerre_normalized(alpha: f64, n: usize) -> Result<Vec<(f64, f64)>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidPrior(format!("gamma shape {alpha} must be positive")));
    }
    let a = alpha - 1.0; // exponent of the Laguerre weight
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        jac[(i, i)] = 2.0 * i as f64 + a + 1.0;
        if i > 0 {
            let off = (i as f64 * (i as f64 + a)).sqrt();
            jac[(i, i - 1)] = off;
            jac[(i - 1, i)] = off;
        }
    }
    let eig = jac.symmetric_eigen();
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let node = eig.eigenvalues[i];
            let w = eig.eigenvectors[(0, i)].powi(2);
            (node, w)
        })
        .collect();
    rule.sort_by(|p, q| p.0.total_cmp(&q.0));
    Ok(rule)
}

/// Fixed composite Gauss–Kronrod nodes on `[a, b]` over `panels`
/// log-spaced subintervals (requires `a > 0`). Returns `(x_i, w_i)` with
/// the weights summing to `b - a`.
pub fn composite_kronrod_nodes(a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    assert!(a > 0.0 && b > a);
    let ratio = (b / a).powf(1.0 / panels as f64);
    let mut nodes = Vec::with_capacity(panels * 15);
    let mut lo = a;
    for _ in 0..panels {
        let hi = (lo * ratio).min(b);
        let c = 0.5 * (lo + hi);
        let h = 0.5 * (hi - lo);
        nodes.push((c, WGK[7] * h));
        for i in 0..7 {
            nodes.push((c - h * XGK[i], WGK[i] * h));
            nodes.push((c + h * XGK[i], WGK[i] * h));
        }
        lo = hi;
    }
    nodes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_polynomial_exact() {
        let v = integrate_adaptive(&|x: f64| x * x, 0.0, 1.0, 1e-12, 40).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_oscillatory() {
        let v = integrate_adaptive(&|x: f64| (10.0 * x).sin(), 0.0, 1.0, 1e-12, 50).unwrap();
        let exact = (1.0 - (10.0_f64).cos()) / 10.0;
        assert!((v - exact).abs() < 1e-11);
    }

    #[test]
    fn adaptive_integrable_singularity() {
        // 1/sqrt(x) on (0,1] integrates to 2.
        let v = integrate_adaptive(&|x: f64| x.sqrt().recip(), 1e-300, 1.0, 1e-9, 60).unwrap();
        assert!((v - 2.0).abs() < 1e-6);
    }

    #[test]
    fn laguerre_weights_sum_to_one() {
        for &alpha in &[0.5, 2.0, 50.0, 1000.0] {
            let rule = gauss_laguerre_normalized(alpha, 96).unwrap();
            let s: f64 = rule.iter().map(|(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-12, "alpha={alpha} sum={s}");
        }
    }

    #[test]
    fn laguerre_gamma_moments() {
        // E lambda^k under Gamma(alpha, beta) = alpha(alpha+1)...(alpha+k-1)/beta^k
        let (alpha, beta) = (5.0, 2.0);
        let rule = gauss_laguerre_normalized(alpha, 64).unwrap();
        for k in 0..4u32 {
            let est: f64 = rule
                .iter()
                .map(|&(t, w)| w * (t / beta).powi(k as i32))
                .sum();
            let mut exact = 1.0;
            for j in 0..k {
                exact *= (alpha + j as f64) / beta;
            }
            assert!(
                ((est - exact) / exact).abs() < 1e-12,
                "k={k} est={est} exact={exact}"
            );
        }
    }

    #[test]
    fn composite_nodes_integrate_smooth() {
        let nodes = composite_kronrod_nodes(1.0, 120.0, 24);
        let est: f64 = nodes.iter().map(|&(x, w)| w * x.ln()).sum();
        let exact = 120.0 * 120.0_f64.ln() - 120.0 + 1.0;
        assert!((est - exact).abs() < 1e-10);
    }
}
