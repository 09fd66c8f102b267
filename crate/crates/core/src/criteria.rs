//! Goal functionals of the design measure and their gradient functions.
//!
//! Linear criteria (G1, G2, the two-point mixture) have gradients that do
//! not depend on the measure; G3, G4 and the cost-augmented variants do.
//! Every functional is evaluated against a fixed set of rate nodes derived
//! from the prior, so repeated evaluations inside descent loops stay cheap.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{g1, g1_log, ln1mexp, logsumexp};
use crate::measure::DesignMeasure;
use crate::priors::Prior;
use crate::quad::{self, QuadratureConfig};

pub use crate::kernels::{r_kernel, y_max};

/// Which goal functional to maximize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriterionKind {
    /// Fisher information at a known rate.
    G1,
    /// Expected Fisher information under the prior.
    G2,
    /// Expected log Fisher information.
    G3,
    /// Negative expected inverse information (asymptotic MLE variance).
    G4,
    /// G1 minus dead-mouse and spoilt-experiment costs.
    #[serde(rename = "G1_cost")]
    G1Cost,
    /// G4 minus expected dead-mouse and spoilt-experiment costs.
    #[serde(rename = "G4_cost")]
    G4Cost,
    /// Two-point mixture of G1 criteria.
    #[serde(rename = "G1_mixture")]
    G1Mixture,
}

impl CriterionKind {
    /// Gradient independent of the measure?
    pub fn is_linear(self) -> bool {
        matches!(
            self,
            CriterionKind::G1 | CriterionKind::G2 | CriterionKind::G1Mixture
        )
    }
}

/// Cost weights for the cost-augmented criteria: `c1` per expected
/// non-repopulated mouse, `c2` per unit probability of a spoilt experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Costs {
    pub c1: f64,
    pub c2: f64,
}

impl Costs {
    /// Worked values for the G1 cost variant.
    pub const G1_DEFAULT: Costs = Costs { c1: 1e-4, c2: 1.0 };
    /// Worked values for the G4 cost variant.
    pub const G4_DEFAULT: Costs = Costs { c1: 0.005, c2: 5.0 };
}

/// A goal functional together with its prior and optional costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub kind: CriterionKind,
    pub prior: Prior,
    #[serde(flatten, skip_serializing_if = "Option::is_none", default)]
    pub costs: Option<Costs>,
}

impl Criterion {
    pub fn new(kind: CriterionKind, prior: Prior) -> Self {
        Criterion {
            kind,
            prior,
            costs: None,
        }
    }

    pub fn with_costs(kind: CriterionKind, prior: Prior, costs: Costs) -> Self {
        Criterion {
            kind,
            prior,
            costs: Some(costs),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        let prior_ok = match self.kind {
            CriterionKind::G1 | CriterionKind::G1Cost => {
                matches!(self.prior, Prior::Point { .. })
            }
            CriterionKind::G1Mixture => matches!(self.prior, Prior::TwoPoint { .. }),
            CriterionKind::G2 | CriterionKind::G3 | CriterionKind::G4 | CriterionKind::G4Cost => {
                matches!(self.prior, Prior::Uniform { .. } | Prior::Gamma { .. })
            }
        };
        if !prior_ok {
            return Err(Error::IncompatibleCriterion(format!(
                "{:?} cannot be used with prior {:?}",
                self.kind, self.prior
            )));
        }
        let is_cost = matches!(self.kind, CriterionKind::G1Cost | CriterionKind::G4Cost);
        match (&self.costs, is_cost) {
            (Some(c), true) => {
                if !(c.c1 >= 0.0 && c.c2 >= 0.0 && c.c1.is_finite() && c.c2.is_finite()) {
                    return Err(Error::IncompatibleCriterion(format!(
                        "costs must be nonnegative, got c1={}, c2={}",
                        c.c1, c.c2
                    )));
                }
            }
            (None, true) => {
                return Err(Error::IncompatibleCriterion(format!(
                    "{:?} requires costs c1, c2",
                    self.kind
                )))
            }
            (Some(_), false) => {
                return Err(Error::IncompatibleCriterion(format!(
                    "{:?} does not accept costs",
                    self.kind
                )))
            }
            (None, false) => {}
        }
        if let Prior::Gamma { alpha, .. } = self.prior {
            if self.kind == CriterionKind::G2 && alpha <= 1.0 {
                return Err(Error::DivergentIntegral(format!(
                    "G2 under Gamma needs shape > 1, got alpha={alpha}"
                )));
            }
        }
        Ok(())
    }

    /// Precompute everything that does not depend on the measure.
    pub fn evaluator(&self, quad: &QuadratureConfig) -> Result<CriterionEval> {
        self.validate()?;
        let nodes = match (self.kind, &self.prior) {
            // the G2 Gamma gradient uses the shape-reduction identity when
            // the shape allows it
            (CriterionKind::G2, &Prior::Gamma { alpha, beta }) if alpha > 2.0 => {
                LambdaNodes::gamma(alpha - 2.0, beta, quad)?
            }
            _ => LambdaNodes::from_prior(&self.prior, quad)?,
        };
        Ok(CriterionEval {
            criterion: self.clone(),
            nodes,
        })
    }
}

/// Value of a criterion at a measure plus its gradient function.
#[derive(Clone)]
pub struct EvalResult {
    pub value: f64,
    gradient: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl EvalResult {
    /// The gradient function `x -> g(x; mu)` on (0, 1].
    pub fn gradient_at(&self, x: f64) -> f64 {
        (self.gradient)(x)
    }

    pub fn gradient_fn(&self) -> Arc<dyn Fn(f64) -> f64 + Send + Sync> {
        self.gradient.clone()
    }
}

impl std::fmt::Debug for EvalResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EvalResult")
            .field("value", &self.value)
            .finish()
    }
}

/// Rate nodes and weights representing the prior in all criterion
/// integrals; weights sum to one.
#[derive(Debug, Clone)]
pub(crate) struct LambdaNodes {
    pub lambdas: Vec<f64>,
    pub weights: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl LambdaNodes {
    pub fn from_prior(prior: &Prior, quad: &QuadratureConfig) -> Result<Self> {
        match *prior {
            Prior::Point { lambda } => Ok(Self::from_pairs(vec![(lambda, 1.0)])),
            Prior::TwoPoint { lambda1, lambda2, p } => {
                Ok(Self::from_pairs(vec![(lambda1, p), (lambda2, 1.0 - p)]))
            }
            Prior::Uniform { upper } => {
                let panels = 24;
                let scale = 1.0 / (upper - 1.0);
                let pairs = quad::composite_kronrod_nodes(1.0, upper, panels)
                    .into_iter()
                    .map(|(x, w)| (x, w * scale))
                    .collect();
                Ok(Self::from_pairs(pairs))
            }
            Prior::Gamma { alpha, beta } => Self::gamma(alpha, beta, quad),
        }
    }

    pub fn gamma(alpha: f64, beta: f64, quad: &QuadratureConfig) -> Result<Self> {
        let rule = quad::gauss_laguerre_normalized(alpha, quad.laguerre_nodes.max(8))?;
        Ok(Self::from_pairs(
            rule.into_iter().map(|(t, w)| (t / beta, w)).collect(),
        ))
    }

    fn from_pairs(pairs: Vec<(f64, f64)>) -> Self {
        let lambdas: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        LambdaNodes {
            lambdas,
            weights,
            log_weights,
        }
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }
}

/// A criterion bound to its precomputed rate nodes.
#[derive(Debug, Clone)]
pub struct CriterionEval {
    criterion: Criterion,
    nodes: LambdaNodes,
}

impl CriterionEval {
    pub fn criterion(&self) -> &Criterion {
        &self.criterion
    }

    pub(crate) fn nodes(&self) -> &LambdaNodes {
        &self.nodes
    }

    /// Objective value only.
    pub fn value(&self, mu: &DesignMeasure) -> Result<f64> {
        Ok(self.evaluate(mu)?.value)
    }

    /// Value and gradient function at `mu`.
    pub fn evaluate(&self, mu: &DesignMeasure) -> Result<EvalResult> {
        let kind = self.criterion.kind;
        self.check_information_domain(mu)?;
        match kind {
            CriterionKind::G1 => {
                let lambda = self.point_lambda();
                let value = mu.atoms().iter().map(|a| a.mass * g1(a.location, lambda)).sum();
                Ok(EvalResult {
                    value,
                    gradient: Arc::new(move |x| g1(x, lambda)),
                })
            }
            CriterionKind::G1Mixture => {
                let (l1, l2, p) = match self.criterion.prior {
                    Prior::TwoPoint { lambda1, lambda2, p } => (lambda1, lambda2, p),
                    _ => unreachable!(),
                };
                let grad = move |x: f64| p * g1(x, l1) + (1.0 - p) * g1(x, l2);
                let value = mu.atoms().iter().map(|a| a.mass * grad(a.location)).sum();
                Ok(EvalResult {
                    value,
                    gradient: Arc::new(grad),
                })
            }
            CriterionKind::G2 => {
                let grad = self.g2_gradient();
                let value = mu.atoms().iter().map(|a| a.mass * grad(a.location)).sum();
                Ok(EvalResult {
                    value,
                    gradient: grad,
                })
            }
            CriterionKind::G3 | CriterionKind::G4 => self.evaluate_information_expectation(mu),
            CriterionKind::G1Cost => self.evaluate_g1_cost(mu),
            CriterionKind::G4Cost => self.evaluate_g4_cost(mu),
        }
    }

    fn point_lambda(&self) -> f64 {
        match self.criterion.prior {
            Prior::Point { lambda } => lambda,
            _ => unreachable!("validated"),
        }
    }

    /// Gradient of G2 as a measure-independent closure.
    fn g2_gradient(&self) -> Arc<dyn Fn(f64) -> f64 + Send + Sync> {
        match self.criterion.prior {
            Prior::Uniform { upper } => Arc::new(move |x| g2_uniform(x, upper)),
            Prior::Gamma { alpha, beta } => {
                let lambdas = self.nodes.lambdas.clone();
                let weights = self.nodes.weights.clone();
                if alpha > 2.0 {
                    // nodes carry Gamma(alpha-2, beta)
                    let scale = beta * beta / ((alpha - 1.0) * (alpha - 2.0));
                    Arc::new(move |x| {
                        let s: f64 = lambdas
                            .iter()
                            .zip(&weights)
                            .map(|(&l, &w)| w * r_kernel(l * x))
                            .sum();
                        scale * s
                    })
                } else {
                    Arc::new(move |x| {
                        lambdas
                            .iter()
                            .zip(&weights)
                            .map(|(&l, &w)| w * g1(x, l))
                            .sum()
                    })
                }
            }
            _ => unreachable!("validated"),
        }
    }

    fn check_information_domain(&self, mu: &DesignMeasure) -> Result<()> {
        let needs_inverse = matches!(
            self.criterion.kind,
            CriterionKind::G3 | CriterionKind::G4 | CriterionKind::G4Cost
        );
        if !needs_inverse {
            return Ok(());
        }
        if mu.is_empty() || mu.total_mass() <= 0.0 {
            return Err(Error::DegenerateInformation);
        }
        if let Prior::Gamma { beta, .. } = self.criterion.prior {
            let x_min = mu.min_location().unwrap();
            if x_min >= beta {
                return Err(Error::DivergentIntegral(format!(
                    "inverse-information expectation diverges: smallest dose {x_min} \
                     is at or above the Gamma rate {beta}"
                )));
            }
        }
        Ok(())
    }

    /// G3 and G4: expectations of `ln I` and `-1/I` over the rate nodes.
    fn evaluate_information_expectation(&self, mu: &DesignMeasure) -> Result<EvalResult> {
        let log_info = self.log_information_profile(mu);
        let kind = self.criterion.kind;
        let nodes = &self.nodes;
        let value = match kind {
            CriterionKind::G3 => nodes
                .weights
                .iter()
                .zip(&log_info)
                .map(|(&w, &li)| w * li)
                .sum(),
            CriterionKind::G4 => {
                let terms: Vec<f64> = nodes
                    .log_weights
                    .iter()
                    .zip(&log_info)
                    .map(|(&lw, &li)| lw - li)
                    .collect();
                -logsumexp(&terms).exp()
            }
            _ => unreachable!(),
        };
        if !value.is_finite() {
            return Err(Error::DivergentIntegral(format!(
                "{kind:?} value overflows at this measure"
            )));
        }
        let grad = self.inverse_information_gradient(&log_info, kind)?;
        Ok(EvalResult {
            value,
            gradient: grad,
        })
    }

    /// `ln I(mu; lambda_l)` for every node, stable against underflow.
    fn log_information_profile(&self, mu: &DesignMeasure) -> Vec<f64> {
        self.nodes
            .lambdas
            .iter()
            .map(|&lam| log_fisher_information(mu, lam))
            .collect()
    }

    /// Gradient closure `x -> E w * I^-p * g1(x)` with `p` = 1 for G3, 2 for
    /// G4 and the G4 cost variant.
    fn inverse_information_gradient(
        &self,
        log_info: &[f64],
        kind: CriterionKind,
    ) -> Result<Arc<dyn Fn(f64) -> f64 + Send + Sync>> {
        let power = match kind {
            CriterionKind::G3 => 1.0,
            CriterionKind::G4 | CriterionKind::G4Cost => 2.0,
            _ => unreachable!(),
        };
        let log_coef: Vec<f64> = self
            .nodes
            .log_weights
            .iter()
            .zip(log_info)
            .map(|(&lw, &li)| lw - power * li)
            .collect();
        let direct: Vec<f64> = log_coef.iter().map(|c| c.exp()).collect();
        let lambdas = self.nodes.lambdas.clone();
        if direct.iter().all(|c| c.is_finite()) {
            Ok(Arc::new(move |x| {
                lambdas
                    .iter()
                    .zip(&direct)
                    .map(|(&l, &c)| c * g1(x, l))
                    .sum()
            }))
        } else {
            // overflow in a coefficient: evaluate the whole sum in log space
            Ok(Arc::new(move |x| {
                if x <= 0.0 {
                    return 0.0;
                }
                let terms: Vec<f64> = lambdas
                    .iter()
                    .zip(&log_coef)
                    .map(|(&l, &c)| c + g1_log(x, l))
                    .collect();
                logsumexp(&terms).exp()
            }))
        }
    }

    fn evaluate_g1_cost(&self, mu: &DesignMeasure) -> Result<EvalResult> {
        let lambda = self.point_lambda();
        let Costs { c1, c2 } = self.criterion.costs.unwrap();
        let g1_value: f64 = mu.atoms().iter().map(|a| a.mass * g1(a.location, lambda)).sum();
        let t1: f64 = mu
            .atoms()
            .iter()
            .map(|a| a.mass * (-lambda * a.location).exp())
            .sum();
        let volume = mu.total_volume();
        let t21 = (-lambda * volume).exp();
        let log_t20: f64 = mu
            .atoms()
            .iter()
            .map(|a| a.mass * ln1mexp(lambda * a.location))
            .sum();
        let t20 = log_t20.exp();
        let value = g1_value - c1 * t1 - c2 * (t21 + t20);
        let gradient = Arc::new(move |x: f64| {
            g1(x, lambda) - c1 * (-lambda * x).exp()
                - c2 * (-lambda * x * t21 + ln1mexp(lambda * x) * t20)
        });
        Ok(EvalResult { value, gradient })
    }

    fn evaluate_g4_cost(&self, mu: &DesignMeasure) -> Result<EvalResult> {
        let Costs { c1, c2 } = self.criterion.costs.unwrap();
        let log_info = self.log_information_profile(mu);
        // -E 1/I
        let g4_terms: Vec<f64> = self
            .nodes
            .log_weights
            .iter()
            .zip(&log_info)
            .map(|(&lw, &li)| lw - li)
            .collect();
        let g4_value = -logsumexp(&g4_terms).exp();
        if !g4_value.is_finite() {
            return Err(Error::DivergentIntegral(
                "inverse-information expectation overflows at this measure".into(),
            ));
        }
        let t1 = expected_dead_mice(mu, &self.criterion.prior)?;
        let volume = mu.total_volume();
        let t21 = expected_all_sterile(volume, &self.criterion.prior)?;
        // per-node probability that every mouse repopulates
        let t20: Vec<f64> = self
            .nodes
            .lambdas
            .iter()
            .map(|&lam| {
                mu.atoms()
                    .iter()
                    .map(|a| a.mass * ln1mexp(lam * a.location))
                    .sum::<f64>()
                    .exp()
            })
            .collect();
        let e_t20: f64 = self
            .nodes
            .weights
            .iter()
            .zip(&t20)
            .map(|(&w, &t)| w * t)
            .sum();
        let value = g4_value - c1 * t1 - c2 * (t21 + e_t20);

        let g4_grad = self.inverse_information_gradient(&log_info, CriterionKind::G4Cost)?;
        let prior = self.criterion.prior;
        let lambdas = self.nodes.lambdas.clone();
        let weights = self.nodes.weights.clone();
        let gradient = Arc::new(move |x: f64| {
            let t1_grad = dead_mouse_kernel(x, &prior);
            let t21_grad = all_sterile_volume_slope(x, volume, &prior);
            let t20_grad: f64 = lambdas
                .iter()
                .zip(&weights)
                .zip(&t20)
                .map(|((&lam, &w), &t)| w * ln1mexp(lam * x) * t)
                .sum();
            g4_grad(x) - c1 * t1_grad - c2 * (t21_grad + t20_grad)
        });
        Ok(EvalResult { value, gradient })
    }
}

/// Gradient of G2 under Uniform(1, u):
/// `x/(u-1) * ln((1 - e^{-ux})/(1 - e^{-x}))`, extended by 0 at x = 0.
pub fn g2_uniform(x: f64, upper: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    // ln((1-e^{-ux})/(1-e^{-x})) = ln u + h(ux) - h(x), h(y) = ln((1-e^-y)/y)
    let h = |y: f64| {
        if y < 1e-8 {
            -0.5 * y
        } else {
            ln1mexp(y) - y.ln()
        }
    };
    x / (upper - 1.0) * (upper.ln() + h(upper * x) - h(x))
}

/// Fisher information of a design at a known rate:
/// `I(mu; lambda) = sum_j m_j x_j^2 / (e^{lambda x_j} - 1)`.
pub fn fisher_information(mu: &DesignMeasure, lambda: f64) -> f64 {
    mu.atoms()
        .iter()
        .map(|a| a.mass * g1(a.location, lambda))
        .sum()
}

/// `ln I(mu; lambda)`, usable far past the underflow range of
/// [`fisher_information`].
pub fn log_fisher_information(mu: &DesignMeasure, lambda: f64) -> f64 {
    let direct = fisher_information(mu, lambda);
    if direct > 1e-280 {
        return direct.ln();
    }
    let terms: Vec<f64> = mu
        .atoms()
        .iter()
        .filter(|a| a.mass > 0.0)
        .map(|a| a.mass.ln() + g1_log(a.location, lambda))
        .collect();
    logsumexp(&terms)
}

/// `E_Q integral e^{-lambda x} mu(dx)`: the expected number of
/// non-repopulated mice. Closed form for every prior variant.
pub fn expected_dead_mice(mu: &DesignMeasure, prior: &Prior) -> Result<f64> {
    prior.validate()?;
    Ok(mu
        .atoms()
        .iter()
        .map(|a| a.mass * dead_mouse_kernel(a.location, prior))
        .sum())
}

/// `E_Q e^{-lambda x}` for a single dose.
pub(crate) fn dead_mouse_kernel(x: f64, prior: &Prior) -> f64 {
    match *prior {
        Prior::Point { lambda } => (-lambda * x).exp(),
        Prior::Uniform { upper } => {
            if x < 1e-12 {
                // limit of (e^-x - e^-ux)/(x(u-1)) as x -> 0
                1.0 - 0.5 * (upper + 1.0) * x
            } else {
                ((-x).exp() - (-upper * x).exp()) / (x * (upper - 1.0))
            }
        }
        Prior::Gamma { alpha, beta } => (-alpha * (x / beta).ln_1p()).exp(),
        Prior::TwoPoint { lambda1, lambda2, p } => {
            p * (-lambda1 * x).exp() + (1.0 - p) * (-lambda2 * x).exp()
        }
    }
}

/// `E_Q e^{-lambda H}`: probability that no mouse repopulates, as a
/// function of the total volume H.
fn expected_all_sterile(volume: f64, prior: &Prior) -> Result<f64> {
    Ok(dead_mouse_kernel(volume, prior))
}

/// d/dx of the all-sterile term when one more dose of volume `x` is added.
pub(crate) fn all_sterile_volume_slope(x: f64, volume: f64, prior: &Prior) -> f64 {
    match *prior {
        Prior::Point { lambda } => -lambda * x * (-lambda * volume).exp(),
        Prior::Gamma { alpha, beta } => {
            -(alpha * x / beta) * (-(alpha + 1.0) * (volume / beta).ln_1p()).exp()
        }
        Prior::Uniform { upper } => {
            // d/dH E e^{-lambda H} times x
            let h = volume;
            let d = if h < 1e-10 {
                -0.5 * (upper + 1.0)
            } else {
                let num = -(-h).exp() + upper * (-upper * h).exp();
                num / (h * (upper - 1.0))
                    - ((-h).exp() - (-upper * h).exp()) / (h * h * (upper - 1.0))
            };
            d * x
        }
        Prior::TwoPoint { lambda1, lambda2, p } => {
            -x * (p * lambda1 * (-lambda1 * volume).exp()
                + (1.0 - p) * lambda2 * (-lambda2 * volume).exp())
        }
    }
}

/// Probability that the experiment is spoilt: all mice repopulate or none
/// do, averaged over the prior.
pub fn spoilt_probability(
    mu: &DesignMeasure,
    prior: &Prior,
    quad: &QuadratureConfig,
) -> Result<f64> {
    if mu.is_empty() {
        return Err(Error::InvalidMeasure(
            "spoilt probability needs a nonempty design".into(),
        ));
    }
    prior.validate()?;
    let all_sterile = expected_all_sterile(mu.total_volume(), prior)?;
    let atoms: Vec<(f64, f64)> = mu.atoms().iter().map(|a| (a.location, a.mass)).collect();
    let none_sterile = prior.expect(
        |lam| {
            atoms
                .iter()
                .map(|&(x, m)| m * ln1mexp(lam * x))
                .sum::<f64>()
                .exp()
        },
        quad,
    )?;
    Ok((all_sterile + none_sterile).min(1.0))
}

/// Convenience entry point: evaluate a criterion at a measure.
pub fn evaluate(
    criterion: &Criterion,
    mu: &DesignMeasure,
    quad: &QuadratureConfig,
) -> Result<EvalResult> {
    criterion.evaluator(quad)?.evaluate(mu)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    #[test]
    fn fisher_information_examples() {
        assert_eq!(fisher_information(&DesignMeasure::empty(), 5.0), 0.0);
        let mu = DesignMeasure::single(1.0 / 30.0, 30.0).unwrap();
        let v = fisher_information(&mu, 30.0);
        assert!((v - 0.019399223562311).abs() < 1e-14);
    }

    #[test]
    fn g1_cost_reduces_to_g1_at_zero_cost() {
        let mu = DesignMeasure::new(&[(0.02, 12.0), (0.05, 18.0)]).unwrap();
        let plain = Criterion::new(CriterionKind::G1, Prior::point(40.0));
        let costed = Criterion::with_costs(
            CriterionKind::G1Cost,
            Prior::point(40.0),
            Costs { c1: 0.0, c2: 0.0 },
        );
        let a = evaluate(&plain, &mu, &q()).unwrap();
        let b = evaluate(&costed, &mu, &q()).unwrap();
        assert!((a.value - b.value).abs() < 1e-15);
        for &x in &[0.001, 0.02, 0.3, 1.0] {
            assert!((a.gradient_at(x) - b.gradient_at(x)).abs() < 1e-15);
        }
    }

    #[test]
    fn mixture_gradient_is_weighted_sum() {
        let c = Criterion::new(CriterionKind::G1Mixture, Prior::two_point(25.0, 150.0, 0.05));
        let mu = DesignMeasure::single(0.02, 30.0).unwrap();
        let e = evaluate(&c, &mu, &q()).unwrap();
        let expect = 0.05 * g1(0.02, 25.0) + 0.95 * g1(0.02, 150.0);
        assert!((e.gradient_at(0.02) - expect).abs() < 1e-18);
        assert!((e.gradient_at(0.02) - 5.074024631741e-5).abs() < 1e-14);
        assert!((e.value - 30.0 * expect).abs() < 1e-15);
    }

    #[test]
    fn g2_uniform_gradient_value() {
        let v = g2_uniform(0.5, 10.0);
        assert!((v - 0.051443965562).abs() < 1e-11, "{v}");
        // vanishing and stable near zero
        assert_eq!(g2_uniform(0.0, 10.0), 0.0);
        assert!(g2_uniform(1e-12, 10.0) > 0.0);
    }

    #[test]
    fn g4_uniform_one_atom_closed_form() {
        let mu = DesignMeasure::single(0.5, 30.0).unwrap();
        let c = Criterion::new(CriterionKind::G4, Prior::uniform(2.0));
        let e = evaluate(&c, &mu, &q()).unwrap();
        assert!((e.value - (-0.151882815402)).abs() < 1e-9, "{}", e.value);
    }

    #[test]
    fn g4_gamma_one_atom_against_mgf() {
        let mu = DesignMeasure::single(0.02, 30.0).unwrap();
        let c = Criterion::new(CriterionKind::G4, Prior::gamma(50.0, 1.0));
        let e = evaluate(&c, &mu, &q()).unwrap();
        assert!(
            ((e.value - (-145.4977250716)) / 145.5).abs() < 1e-8,
            "{}",
            e.value
        );
    }

    #[test]
    fn degenerate_and_divergent_cases() {
        let c = Criterion::new(CriterionKind::G4, Prior::gamma(50.0, 1.0));
        assert!(matches!(
            evaluate(&c, &DesignMeasure::empty(), &q()),
            Err(Error::DegenerateInformation)
        ));
        let at_one = DesignMeasure::single(1.0, 30.0).unwrap();
        assert!(matches!(
            evaluate(&c, &at_one, &q()),
            Err(Error::DivergentIntegral(_))
        ));
    }

    #[test]
    fn expected_dead_mice_examples() {
        let mu = DesignMeasure::single(1.0 / 30.0, 30.0).unwrap();
        let v = expected_dead_mice(&mu, &Prior::point(30.0)).unwrap();
        assert!((v - 11.036383235143).abs() < 1e-9);
        let mu = DesignMeasure::single(0.02, 30.0).unwrap();
        let v = expected_dead_mice(&mu, &Prior::gamma(50.0, 1.0)).unwrap();
        assert!((v - 11.145836463809).abs() < 1e-9);
    }

    #[test]
    fn spoilt_probability_point_prior() {
        let mu = DesignMeasure::single(1.0 / 30.0, 30.0).unwrap();
        let v = spoilt_probability(&mu, &Prior::point(30.0), &q()).unwrap();
        let exact = (-30.0_f64).exp() + (1.0 - (-1.0_f64).exp()).powi(30);
        assert!(((v - exact) / exact).abs() < 1e-10);
        // tiny rates make every dose sterile
        let v = spoilt_probability(&mu, &Prior::point(1e-9), &q()).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn spoilt_probability_gamma_identity() {
        // all-sterile component equals (1 + H)^-alpha at beta = 1
        let mu = DesignMeasure::new(&[(0.01, 10.0), (0.02, 20.0)]).unwrap();
        let h = mu.total_volume();
        let alpha = 5.0;
        let term = expected_all_sterile(h, &Prior::gamma(alpha, 1.0)).unwrap();
        assert!(((term - (1.0 + h).powf(-alpha)) / term).abs() < 1e-12);
    }

    #[test]
    fn criterion_validation_matrix() {
        use CriterionKind::*;
        let point = Prior::point(50.0);
        let unif = Prior::uniform(120.0);
        let gam = Prior::gamma(50.0, 1.0);
        let two = Prior::two_point(25.0, 150.0, 0.05);
        assert!(Criterion::new(G1, point).validate().is_ok());
        assert!(Criterion::new(G1, unif).validate().is_err());
        assert!(Criterion::new(G2, unif).validate().is_ok());
        assert!(Criterion::new(G3, gam).validate().is_ok());
        assert!(Criterion::new(G1Mixture, two).validate().is_ok());
        assert!(Criterion::new(G1Mixture, point).validate().is_err());
        assert!(Criterion::new(G1Cost, point).validate().is_err()); // missing costs
        assert!(Criterion::with_costs(G1Cost, point, Costs::G1_DEFAULT)
            .validate()
            .is_ok());
        assert!(Criterion::with_costs(G2, unif, Costs::G1_DEFAULT)
            .validate()
            .is_err());
        assert!(
            Criterion::with_costs(G1Cost, point, Costs { c1: -1.0, c2: 0.0 })
                .validate()
                .is_err()
        );
        // G2 gamma shape must exceed 1
        assert!(Criterion::new(G2, Prior::gamma(0.8, 1.0)).validate().is_err());
    }

    #[test]
    fn criterion_json_round_trip() {
        let c = Criterion::with_costs(
            CriterionKind::G4Cost,
            Prior::gamma(50.0, 1.0),
            Costs { c1: 0.005, c2: 5.0 },
        );
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"G4_cost\""));
        assert!(s.contains("\"c1\":0.005"));
        let back: Criterion = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
