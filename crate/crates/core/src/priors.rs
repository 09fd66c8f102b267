//! Prior distributions over the Poisson rate and expectations against them.

use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::quad::{self, QuadratureConfig};

/// Prior distribution over the mean pre-HSC count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Prior {
    /// Degenerate prior: the rate is known.
    Point {
        #[serde(rename = "lambda")]
        lambda: f64,
    },
    /// Uniform(1, u); the lower end is pinned at 1 because at least one
    /// pre-HSC must be present for the experiment to make sense.
    Uniform {
        #[serde(rename = "u")]
        upper: f64,
    },
    /// Gamma with shape `alpha` and rate `beta`.
    Gamma { alpha: f64, beta: f64 },
    /// Two-point mixture: `lambda1` with probability `p`, else `lambda2`.
    TwoPoint {
        lambda1: f64,
        lambda2: f64,
        p: f64,
    },
}

impl Prior {
    pub fn point(lambda: f64) -> Self {
        Prior::Point { lambda }
    }

    pub fn uniform(upper: f64) -> Self {
        Prior::Uniform { upper }
    }

    pub fn gamma(alpha: f64, beta: f64) -> Self {
        Prior::Gamma { alpha, beta }
    }

    pub fn two_point(lambda1: f64, lambda2: f64, p: f64) -> Self {
        Prior::TwoPoint { lambda1, lambda2, p }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Prior::Point { lambda } => lambda > 0.0 && lambda.is_finite(),
            Prior::Uniform { upper } => upper > 1.0 && upper.is_finite(),
            Prior::Gamma { alpha, beta } => {
                alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()
            }
            Prior::TwoPoint { lambda1, lambda2, p } => {
                lambda1 > 0.0 && lambda2 > 0.0 && p > 0.0 && p < 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidPrior(format!("{self:?}")))
        }
    }

    /// Probability density at `lambda` for the continuous variants.
    pub fn density(&self, lambda: f64) -> Result<f64> {
        match *self {
            Prior::Uniform { upper } => {
                if (1.0..=upper).contains(&lambda) {
                    Ok(1.0 / (upper - 1.0))
                } else {
                    Ok(0.0)
                }
            }
            Prior::Gamma { alpha, beta } => {
                if lambda <= 0.0 {
                    return Err(Error::InvalidPrior(format!(
                        "gamma density requested at lambda={lambda} <= 0"
                    )));
                }
                Ok(gamma_log_density(lambda, alpha, beta).exp())
            }
            _ => Err(Error::InvalidPrior(
                "density is defined only for continuous priors".into(),
            )),
        }
    }

    /// `E_Q[f(lambda)]` to absolute accuracy `quad.tol`.
    ///
    /// Uniform priors use adaptive Gauss–Kronrod on `[1, u]`. Gamma priors
    /// first try a generalized Gauss–Laguerre rule (node count from the
    /// config, checked against a doubled rule) and fall back to adaptive
    /// quadrature on a truncated range, extending the cut until
    /// `|f| * density` has decayed below `tol/10`; integrands that keep
    /// growing (e.g. `e^{lambda x}` with `x >= beta`) are reported as
    /// non-convergent instead of returning a number.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F, quad: &QuadratureConfig) -> Result<f64> {
        self.validate()?;
        match *self {
            Prior::Point { lambda } => {
                let v = f(lambda);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::QuadratureNonConvergent(format!(
                        "integrand not finite at lambda={lambda}"
                    )))
                }
            }
            Prior::TwoPoint { lambda1, lambda2, p } => {
                let v = p * f(lambda1) + (1.0 - p) * f(lambda2);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::QuadratureNonConvergent(
                        "integrand not finite at a mixture point".into(),
                    ))
                }
            }
            Prior::Uniform { upper } => {
                let integral = quad::integrate_adaptive(
                    &f,
                    1.0,
                    upper,
                    quad.tol * (upper - 1.0),
                    quad.max_depth,
                )?;
                Ok(integral / (upper - 1.0))
            }
            Prior::Gamma { alpha, beta } => gamma_expect(&f, alpha, beta, quad),
        }
    }

    /// `E_Q[ln lambda]` in closed form.
    pub fn expect_log_lambda(&self) -> Result<f64> {
        self.validate()?;
        Ok(match *self {
            Prior::Point { lambda } => lambda.ln(),
            Prior::Uniform { upper } => {
                let u = upper;
                (u * u.ln() - u + 1.0) / (u - 1.0)
            }
            Prior::Gamma { alpha, beta } => digamma(alpha) - beta.ln(),
            Prior::TwoPoint { lambda1, lambda2, p } => {
                p * lambda1.ln() + (1.0 - p) * lambda2.ln()
            }
        })
    }
}

pub(crate) fn gamma_log_density(lambda: f64, alpha: f64, beta: f64) -> f64 {
    alpha * beta.ln() - ln_gamma(alpha) + (alpha - 1.0) * lambda.ln() - beta * lambda
}

fn gamma_expect<F: Fn(f64) -> f64>(
    f: &F,
    alpha: f64,
    beta: f64,
    quad: &QuadratureConfig,
) -> Result<f64> {
    // Fast path: Gauss-Laguerre with an n-vs-2n error check.
    let n = quad.laguerre_nodes.max(8);
    let coarse = laguerre_sum(f, alpha, beta, n)?;
    let fine = laguerre_sum(f, alpha, beta, 2 * n)?;
    if let (Some(a), Some(b)) = (coarse, fine) {
        if (a - b).abs() <= 0.5 * quad.tol {
            return Ok(b);
        }
    }

    // Adaptive fallback on a truncated range.
    let dist = statrs::distribution::Gamma::new(alpha, beta)
        .map_err(|e| Error::InvalidPrior(format!("gamma({alpha}, {beta}): {e}")))?;
    let mean = alpha / beta;
    let sd = alpha.sqrt() / beta;
    let mut hi = mean + 10.0 * sd + 10.0;
    let weighted = |lam: f64| f(lam) * gamma_log_density(lam, alpha, beta).exp();
    let mut extensions = 0;
    loop {
        let tail_small = dist.sf(hi) < 0.1 * quad.tol;
        let decayed = weighted(hi).abs() < 0.1 * quad.tol
            && weighted(1.5 * hi).abs() < 0.1 * quad.tol
            && weighted(2.0 * hi).abs() <= weighted(hi).abs().max(0.1 * quad.tol);
        if tail_small && decayed {
            break;
        }
        hi *= 2.0;
        extensions += 1;
        if extensions > 40 {
            return Err(Error::QuadratureNonConvergent(format!(
                "integrand times Gamma({alpha}, {beta}) density does not decay; \
                 the expectation likely diverges"
            )));
        }
    }
    quad::integrate_adaptive(&weighted, 1e-300, hi, quad.tol, quad.max_depth)
}

fn laguerre_sum<F: Fn(f64) -> f64>(f: &F, alpha: f64, beta: f64, n: usize) -> Result<Option<f64>> {
    let rule = quad::gauss_laguerre_normalized(alpha, n)?;
    let mut acc = 0.0;
    for &(t, w) in &rule {
        let v = f(t / beta);
        if !v.is_finite() {
            return Ok(None);
        }
        acc += w * v;
    }
    Ok(if acc.is_finite() { Some(acc) } else { None })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    #[test]
    fn point_and_two_point_expectations() {
        let q = cfg();
        let p = Prior::point(20.0);
        let g = |lam: f64| lam * lam - 3.0;
        assert_eq!(p.expect(g, &q).unwrap(), g(20.0));

        let tp = Prior::two_point(25.0, 150.0, 0.05);
        let v = tp.expect(|lam| lam, &q).unwrap();
        assert!((v - (0.05 * 25.0 + 0.95 * 150.0)).abs() < 1e-12);
    }

    #[test]
    fn uniform_mean() {
        let v = Prior::uniform(3.0).expect(|lam| lam, &cfg()).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_mgf_against_closed_form() {
        // E e^{0.02 lambda} under Gamma(5, 1) = (1 - 0.02)^-5
        let v = Prior::gamma(5.0, 1.0)
            .expect(|lam| (0.02 * lam).exp(), &cfg())
            .unwrap();
        assert!((v - 1.106291617075).abs() < 1e-9, "{v}");
    }

    #[test]
    fn gamma_moments_match_factorials() {
        let (alpha, beta) = (3.5, 2.0);
        let prior = Prior::gamma(alpha, beta);
        let mut exact = 1.0;
        for k in 0..4 {
            if k > 0 {
                exact *= (alpha + (k - 1) as f64) / beta;
            }
            let v = prior.expect(|lam| lam.powi(k), &cfg()).unwrap();
            assert!(
                ((v - exact) / exact).abs() < 1e-8,
                "k={k}: {v} vs {exact}"
            );
        }
    }

    #[test]
    fn gamma_divergent_mgf_is_an_error() {
        // E e^{lambda x} with x >= beta diverges.
        let r = Prior::gamma(3.0, 1.0).expect(|lam| lam.exp(), &cfg());
        assert!(matches!(r, Err(Error::QuadratureNonConvergent(_))));
    }

    #[test]
    fn densities() {
        let v = Prior::uniform(201.0).density(50.0).unwrap();
        assert!((v - 0.005).abs() < 1e-15);
        let v = Prior::gamma(1.0, 1.0).density(2.0).unwrap();
        assert!((v - (-2.0_f64).exp()).abs() < 1e-12);
        let v = Prior::gamma(2.0, 1.0).density(1.0).unwrap();
        assert!((v - (-1.0_f64).exp()).abs() < 1e-12);
        assert!(Prior::point(3.0).density(1.0).is_err());
    }

    #[test]
    fn expectation_of_constant_is_constant() {
        let q = cfg();
        for prior in [
            Prior::point(10.0),
            Prior::uniform(120.0),
            Prior::gamma(50.0, 1.0),
            Prior::two_point(25.0, 150.0, 0.05),
        ] {
            let v = prior.expect(|_| 7.25, &q).unwrap();
            assert!((v - 7.25).abs() < q.tol, "{prior:?}: {v}");
        }
    }

    #[test]
    fn expect_log_lambda_closed_forms() {
        let v = Prior::uniform(120.0).expect_log_lambda().unwrap();
        assert!((v - 3.827722765831).abs() < 1e-9);
        let v = Prior::gamma(50.0, 1.0).expect_log_lambda().unwrap();
        assert!((v - 3.901989673428).abs() < 1e-9);
        // agreement with quadrature
        for prior in [Prior::uniform(50.0), Prior::gamma(8.0, 2.0)] {
            let direct = prior.expect(|lam| lam.ln(), &cfg()).unwrap();
            let closed = prior.expect_log_lambda().unwrap();
            assert!((direct - closed).abs() < 1e-8, "{prior:?}");
        }
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(Prior::point(0.0).validate().is_err());
        assert!(Prior::uniform(1.0).validate().is_err());
        assert!(Prior::gamma(0.0, 1.0).validate().is_err());
        assert!(Prior::gamma(1.0, -1.0).validate().is_err());
        assert!(Prior::two_point(1.0, 2.0, 0.0).validate().is_err());
        assert!(Prior::two_point(1.0, 2.0, 1.0).validate().is_err());
    }

    #[test]
    fn json_schema() {
        let p: Prior = serde_json::from_str(r#"{"type":"uniform","u":120}"#).unwrap();
        assert_eq!(p, Prior::uniform(120.0));
        let p: Prior = serde_json::from_str(r#"{"type":"gamma","alpha":50,"beta":1}"#).unwrap();
        assert_eq!(p, Prior::gamma(50.0, 1.0));
        let p: Prior = serde_json::from_str(r#"{"type":"point","lambda":100}"#).unwrap();
        assert_eq!(p, Prior::point(100.0));
        let p: Prior =
            serde_json::from_str(r#"{"type":"two_point","lambda1":25,"lambda2":150,"p":0.05}"#)
                .unwrap();
        assert_eq!(p, Prior::two_point(25.0, 150.0, 0.05));
    }
}
