//! Fast solvers for the equal-dose design class `n * delta_x` and the
//! decision thresholds at which the optimal dose leaves the volume
//! boundary 1/n.

use serde::Serialize;

use crate::criteria::{self, g2_uniform, Costs, Criterion, CriterionKind};
use crate::error::{Error, Result};
use crate::kernels::{g1, ln1mexp, r_kernel_log};
use crate::measure::DesignMeasure;
use crate::optimizer::{optimize, OptimizeOutcome, OptimizerConfig};
use crate::priors::Prior;
use crate::quad::QuadratureConfig;
use crate::scalar;

/// Solution of the scalar problem: maximize the criterion over
/// `n * delta_x` subject to `x <= 1/n`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OneAtomSolution {
    /// Constrained optimal dose in (0, 1/n].
    pub x_star: f64,
    /// Maximizer ignoring the volume constraint.
    pub x_unconstrained: f64,
    /// Whether the volume constraint binds: `x_star == 1/n`.
    pub at_boundary: bool,
    /// Criterion value at `n * delta_{x_star}`.
    pub objective: f64,
}

/// One-atom objective `x -> criterion(n * delta_x)` with the prior
/// integrals reduced to closed forms or fixed node sums.
pub struct OneAtomObjective {
    n: f64,
    form: Form,
}

enum Form {
    G1 {
        lambda: f64,
    },
    G2Uniform {
        upper: f64,
    },
    /// Node sum of `r(lambda x)`; `scale` carries the shape-reduction
    /// factor when the nodes sit at a shifted Gamma shape.
    G2Nodes {
        nodes: Vec<(f64, f64)>,
        scale: f64,
        uses_r: bool,
    },
    /// `ln n - 2 E ln lambda + sum w ln r(lambda x)`.
    G3 {
        nodes: Vec<(f64, f64)>,
        const_term: f64,
    },
    G4Uniform {
        upper: f64,
    },
    G4Gamma {
        alpha: f64,
        beta: f64,
    },
    G1Cost {
        lambda: f64,
        c1: f64,
        c2: f64,
    },
    G4Cost {
        prior: Prior,
        nodes: Vec<(f64, f64)>,
        c1: f64,
        c2: f64,
    },
    Mixture {
        lambda1: f64,
        lambda2: f64,
        p: f64,
    },
}

impl OneAtomObjective {
    pub fn new(criterion: &Criterion, n: f64, quad: &QuadratureConfig) -> Result<Self> {
        criterion.validate()?;
        if !(n >= 1.0) {
            return Err(Error::Infeasible(format!("n = {n} must be at least 1")));
        }
        let eval = criterion.evaluator(quad)?;
        let node_pairs = || -> Vec<(f64, f64)> {
            eval.nodes()
                .lambdas
                .iter()
                .zip(&eval.nodes().weights)
                .map(|(&l, &w)| (l, w))
                .collect()
        };
        let form = match (criterion.kind, &criterion.prior) {
            (CriterionKind::G1, &Prior::Point { lambda }) => Form::G1 { lambda },
            (CriterionKind::G1Mixture, &Prior::TwoPoint { lambda1, lambda2, p }) => {
                Form::Mixture { lambda1, lambda2, p }
            }
            (CriterionKind::G2, &Prior::Uniform { upper }) => Form::G2Uniform { upper },
            (CriterionKind::G2, &Prior::Gamma { alpha, beta }) => {
                // evaluator nodes already sit at shape alpha-2 when alpha > 2
                if alpha > 2.0 {
                    Form::G2Nodes {
                        nodes: node_pairs(),
                        scale: beta * beta / ((alpha - 1.0) * (alpha - 2.0)),
                        uses_r: true,
                    }
                } else {
                    Form::G2Nodes {
                        nodes: node_pairs(),
                        scale: 1.0,
                        uses_r: false,
                    }
                }
            }
            (CriterionKind::G3, _) => Form::G3 {
                nodes: node_pairs(),
                const_term: n.ln() - 2.0 * criterion.prior.expect_log_lambda()?,
            },
            (CriterionKind::G4, &Prior::Uniform { upper }) => Form::G4Uniform { upper },
            (CriterionKind::G4, &Prior::Gamma { alpha, beta }) => Form::G4Gamma { alpha, beta },
            (CriterionKind::G1Cost, &Prior::Point { lambda }) => {
                let Costs { c1, c2 } = criterion.costs.unwrap();
                Form::G1Cost { lambda, c1, c2 }
            }
            (CriterionKind::G4Cost, prior) => {
                let Costs { c1, c2 } = criterion.costs.unwrap();
                Form::G4Cost {
                    prior: *prior,
                    nodes: node_pairs(),
                    c1,
                    c2,
                }
            }
            _ => {
                return Err(Error::IncompatibleCriterion(format!(
                    "{:?} with {:?}",
                    criterion.kind, criterion.prior
                )))
            }
        };
        Ok(OneAtomObjective { n, form })
    }

    /// Upper end of the search domain for the unconstrained maximizer.
    /// Expectations of `e^{lambda x}` under Gamma(alpha, beta) force
    /// `x < beta`.
    pub fn domain_hi(&self) -> f64 {
        match &self.form {
            Form::G4Gamma { beta, .. } => (beta * (1.0 - 1e-9)).min(1.0),
            Form::G4Cost {
                prior: Prior::Gamma { beta, .. },
                ..
            } => (beta * (1.0 - 1e-9)).min(1.0),
            _ => 1.0,
        }
    }

    /// Criterion value at `n * delta_x`; minus infinity outside the domain
    /// of convergence.
    pub fn value(&self, x: f64) -> f64 {
        if x <= 0.0 || x > 1.0 {
            return f64::NEG_INFINITY;
        }
        let n = self.n;
        match &self.form {
            Form::G1 { lambda } => n * g1(x, *lambda),
            Form::Mixture { lambda1, lambda2, p } => {
                n * (p * g1(x, *lambda1) + (1.0 - p) * g1(x, *lambda2))
            }
            Form::G2Uniform { upper } => n * g2_uniform(x, *upper),
            Form::G2Nodes { nodes, scale, uses_r } => {
                let s: f64 = nodes
                    .iter()
                    .map(|&(l, w)| {
                        if *uses_r {
                            w * crate::kernels::r_kernel(l * x)
                        } else {
                            w * g1(x, l)
                        }
                    })
                    .sum();
                n * scale * s
            }
            Form::G3 { nodes, const_term } => {
                let s: f64 = nodes.iter().map(|&(l, w)| w * r_kernel_log(l * x)).sum();
                const_term + s
            }
            Form::G4Uniform { upper } => g4_uniform_one_atom(x, *upper, n),
            Form::G4Gamma { alpha, beta } => g4_gamma_one_atom(x, *alpha, *beta, n),
            Form::G1Cost { lambda, c1, c2 } => {
                let y = lambda * x;
                n * g1(x, *lambda) - c1 * n * (-y).exp()
                    - c2 * ((-n * y).exp() + (n * ln1mexp(y)).exp())
            }
            Form::G4Cost { prior, nodes, c1, c2 } => {
                let base = match *prior {
                    Prior::Gamma { alpha, beta } => g4_gamma_one_atom(x, alpha, beta, n),
                    Prior::Uniform { upper } => g4_uniform_one_atom(x, upper, n),
                    _ => unreachable!("validated"),
                };
                if base == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
                let dead = n * criteria::dead_mouse_kernel(x, prior);
                let all_sterile = criteria::dead_mouse_kernel(n * x, prior);
                let none_sterile: f64 = nodes
                    .iter()
                    .map(|&(l, w)| w * (n * ln1mexp(l * x)).exp())
                    .sum();
                base - c1 * dead - c2 * (all_sterile + none_sterile)
            }
        }
    }
}

/// `G4(n delta_x; u) = -(e^{ux} - e^x - x(u-1)) / (n x^3 (u-1))`,
/// written with expm1 to survive small x.
fn g4_uniform_one_atom(x: f64, upper: f64, n: f64) -> f64 {
    let num = (upper * x).exp_m1() - x.exp_m1() - x * (upper - 1.0);
    -num / (n * x * x * x * (upper - 1.0))
}

/// `G4(n delta_x; alpha, beta) = -((1 - x/beta)^-alpha - 1) / (n x^2)`,
/// finite only for `x < beta`.
fn g4_gamma_one_atom(x: f64, alpha: f64, beta: f64, n: f64) -> f64 {
    if x >= beta {
        return f64::NEG_INFINITY;
    }
    let grown = (-alpha * (-x / beta).ln_1p()).exp_m1();
    -grown / (n * x * x)
}

/// Maximize the criterion over one-atom designs `n * delta_x`,
/// `x in (0, 1/n]`.
pub fn solve_one_atom(
    criterion: &Criterion,
    n: f64,
    quad: &QuadratureConfig,
) -> Result<OneAtomSolution> {
    let obj = OneAtomObjective::new(criterion, n, quad)?;
    let cap = 1.0 / n;
    let hi = obj.domain_hi();
    let (x_unconstrained, _) =
        scalar::maximize_scanned(|x| obj.value(x), 1e-6, hi, 200, 1e-8)?;
    let at_boundary = x_unconstrained >= cap;
    let x_star = if at_boundary { cap } else { x_unconstrained };
    let objective = obj.value(x_star);
    if !objective.is_finite() {
        return Err(Error::DegenerateObjective(format!(
            "objective not finite at x = {x_star}"
        )));
    }
    Ok(OneAtomSolution {
        x_star,
        x_unconstrained,
        at_boundary,
        objective,
    })
}

/// Criterion family for threshold computation: the parameter value at
/// which the unconstrained one-atom dose crosses 1/n.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdFamily {
    /// Known rate: threshold in lambda (equals `n * y_max`).
    G1,
    /// Gamma prior G2: threshold in the shape alpha.
    G2Gamma { beta: f64 },
    /// Uniform prior G3: threshold in the upper bound u.
    G3Uniform,
    G3Gamma { beta: f64 },
    G4Uniform,
    G4Gamma { beta: f64 },
    /// Cost-augmented G1: threshold in lambda where dilution starts.
    G1Cost { c1: f64, c2: f64 },
}

impl ThresholdFamily {
    fn criterion(&self, parameter: f64) -> Criterion {
        match *self {
            ThresholdFamily::G1 => Criterion::new(CriterionKind::G1, Prior::point(parameter)),
            ThresholdFamily::G2Gamma { beta } => {
                Criterion::new(CriterionKind::G2, Prior::gamma(parameter, beta))
            }
            ThresholdFamily::G3Uniform => {
                Criterion::new(CriterionKind::G3, Prior::uniform(parameter))
            }
            ThresholdFamily::G3Gamma { beta } => {
                Criterion::new(CriterionKind::G3, Prior::gamma(parameter, beta))
            }
            ThresholdFamily::G4Uniform => {
                Criterion::new(CriterionKind::G4, Prior::uniform(parameter))
            }
            ThresholdFamily::G4Gamma { beta } => {
                Criterion::new(CriterionKind::G4, Prior::gamma(parameter, beta))
            }
            ThresholdFamily::G1Cost { c1, c2 } => Criterion::with_costs(
                CriterionKind::G1Cost,
                Prior::point(parameter),
                Costs { c1, c2 },
            ),
        }
    }

    fn bracket(&self) -> (f64, f64) {
        match self {
            ThresholdFamily::G1 | ThresholdFamily::G1Cost { .. } => (1.0, 1e4),
            ThresholdFamily::G3Uniform | ThresholdFamily::G4Uniform => (1.0 + 1e-6, 1e4),
            ThresholdFamily::G2Gamma { .. }
            | ThresholdFamily::G3Gamma { .. }
            | ThresholdFamily::G4Gamma { .. } => (2.0 + 1e-6, 1e4),
        }
    }
}

/// Parameter value at which the unconstrained one-atom dose equals 1/n.
/// The dose is decreasing in the parameter for every family, so plain
/// bisection applies; resolved to 1e-3 in the parameter.
pub fn threshold(family: ThresholdFamily, n: f64, quad: &QuadratureConfig) -> Result<f64> {
    let (lo, hi) = family.bracket();
    let cap = 1.0 / n;
    let dose_gap = |p: f64| -> f64 {
        let criterion = family.criterion(p);
        match OneAtomObjective::new(&criterion, n, quad) {
            Ok(obj) => {
                match scalar::maximize_scanned(|x| obj.value(x), 1e-6, obj.domain_hi(), 200, 1e-8)
                {
                    Ok((x_unc, _)) => x_unc - cap,
                    Err(_) => f64::NAN,
                }
            }
            Err(_) => f64::NAN,
        }
    };
    scalar::bisect_decreasing(dose_gap, lo, hi, 1e-3).map_err(|_| {
        Error::BracketFailure(format!(
            "unconstrained dose never crosses 1/n = {cap} for {family:?} on [{lo}, {hi}]"
        ))
    })
}

/// Side-by-side run of the full-measure optimizer and the one-atom solver.
#[derive(Debug, Clone, Serialize)]
pub struct CrossCheckReport {
    pub one_atom_x: f64,
    pub one_atom_objective: f64,
    pub full_measure: DesignMeasure,
    pub full_objective: f64,
    pub full_atom_count: usize,
    /// full optimizer objective minus the best one-atom objective
    pub objective_gap: f64,
    /// dose difference when the full optimum is itself one atom
    pub x_difference: Option<f64>,
    /// true when the one-atom class attains the full optimum (within
    /// 1e-6 relative)
    pub one_atom_optimal: bool,
}

pub fn cross_check(
    criterion: &Criterion,
    n: f64,
    config: &OptimizerConfig,
) -> Result<CrossCheckReport> {
    let one = solve_one_atom(criterion, n, &config.quad)?;
    let full: OptimizeOutcome = optimize(criterion, n, config)?;
    let objective_gap = full.objective - one.objective;
    let x_difference = if full.measure.len() == 1 {
        Some((full.measure.atoms()[0].location - one.x_star).abs())
    } else {
        None
    };
    let scale = one.objective.abs().max(full.objective.abs()).max(1e-300);
    Ok(CrossCheckReport {
        one_atom_x: one.x_star,
        one_atom_objective: one.objective,
        full_objective: full.objective,
        full_atom_count: full.measure.len(),
        full_measure: full.measure,
        objective_gap,
        x_difference,
        one_atom_optimal: objective_gap <= 1e-6 * scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::y_max;

    fn q() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    #[test]
    fn g1_dilution_rule() {
        // lambda=100 > 30 y_max: dilute to y_max/lambda
        let c = Criterion::new(CriterionKind::G1, Prior::point(100.0));
        let s = solve_one_atom(&c, 30.0, &q()).unwrap();
        assert!(!s.at_boundary);
        assert!((s.x_star - y_max() / 100.0).abs() < 1e-7, "{}", s.x_star);
        // lambda=20: use the whole substrate
        let c = Criterion::new(CriterionKind::G1, Prior::point(20.0));
        let s = solve_one_atom(&c, 30.0, &q()).unwrap();
        assert!(s.at_boundary);
        assert_eq!(s.x_star, 1.0 / 30.0);
        assert!((s.x_unconstrained - y_max() / 20.0).abs() < 1e-7);
    }

    #[test]
    fn clipping_law_across_criteria() {
        let cases = [
            Criterion::new(CriterionKind::G1, Prior::point(35.0)),
            Criterion::new(CriterionKind::G3, Prior::uniform(120.0)),
            Criterion::new(CriterionKind::G3, Prior::uniform(20.0)),
            Criterion::new(CriterionKind::G4, Prior::gamma(60.0, 1.0)),
            Criterion::new(CriterionKind::G2, Prior::gamma(70.0, 1.0)),
        ];
        for c in cases {
            let s = solve_one_atom(&c, 30.0, &q()).unwrap();
            let expected = s.x_unconstrained.min(1.0 / 30.0);
            assert!(
                (s.x_star - expected).abs() < 1e-12,
                "{c:?}: {s:?}"
            );
            assert_eq!(s.at_boundary, s.x_unconstrained >= 1.0 / 30.0);
        }
    }

    #[test]
    fn g3_uniform_matches_figure_values() {
        let c = Criterion::new(CriterionKind::G3, Prior::uniform(120.0));
        let s = solve_one_atom(&c, 30.0, &q()).unwrap();
        assert!(!s.at_boundary);
        assert!((s.x_star - 0.0252394).abs() < 2e-5, "{}", s.x_star);
        let c = Criterion::new(CriterionKind::G3, Prior::uniform(20.0));
        let s = solve_one_atom(&c, 30.0, &q()).unwrap();
        assert!(s.at_boundary);
    }

    #[test]
    fn one_atom_values_match_measure_evaluator() {
        // the distilled objective must agree with the generic evaluator
        let cases = [
            Criterion::new(CriterionKind::G1, Prior::point(50.0)),
            Criterion::new(CriterionKind::G2, Prior::uniform(80.0)),
            Criterion::new(CriterionKind::G2, Prior::gamma(50.0, 1.0)),
            Criterion::new(CriterionKind::G3, Prior::uniform(60.0)),
            Criterion::new(CriterionKind::G3, Prior::gamma(40.0, 1.0)),
            Criterion::new(CriterionKind::G4, Prior::uniform(50.0)),
            Criterion::new(CriterionKind::G4, Prior::gamma(50.0, 1.0)),
            Criterion::with_costs(CriterionKind::G1Cost, Prior::point(45.0), Costs::G1_DEFAULT),
            Criterion::with_costs(
                CriterionKind::G4Cost,
                Prior::gamma(50.0, 1.0),
                Costs::G4_DEFAULT,
            ),
            Criterion::new(CriterionKind::G1Mixture, Prior::two_point(25.0, 150.0, 0.05)),
        ];
        for c in cases {
            let obj = OneAtomObjective::new(&c, 30.0, &q()).unwrap();
            let eval = c.evaluator(&q()).unwrap();
            for &x in &[0.01, 1.0 / 30.0, 0.02522] {
                let mu = DesignMeasure::single(x, 30.0).unwrap();
                let direct = eval.evaluate(&mu).unwrap().value;
                let fast = obj.value(x);
                assert!(
                    ((direct - fast) / direct.abs().max(1e-300)).abs() < 1e-9,
                    "{c:?} at x={x}: fast {fast} vs direct {direct}"
                );
            }
        }
    }

    #[test]
    fn g1_threshold_is_n_y_max() {
        let t = threshold(ThresholdFamily::G1, 30.0, &q()).unwrap();
        assert!((t - 30.0 * y_max()).abs() < 5e-3, "{t}");
    }

    #[test]
    fn g4_gamma_domain_guard() {
        let c = Criterion::new(CriterionKind::G4, Prior::gamma(50.0, 0.02));
        // beta < 1/n: whole feasible range diverges except x < beta
        let s = solve_one_atom(&c, 30.0, &q()).unwrap();
        assert!(s.x_star < 0.02);
    }

    #[test]
    fn bracket_failure_reported() {
        // with n huge, 1/n sits below the unconstrained dose for every
        // shape in the search range, so there is no crossing to find
        let r = threshold(ThresholdFamily::G2Gamma { beta: 1.0 }, 1e4, &q());
        assert!(matches!(r, Err(Error::BracketFailure(_))));
    }
}
