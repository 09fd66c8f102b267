use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("criterion/prior mismatch: {0}")]
    IncompatibleCriterion(String),

    #[error("quadrature did not converge: {0}")]
    QuadratureNonConvergent(String),

    #[error("divergent integral: {0}")]
    DivergentIntegral(String),

    #[error("Fisher information is degenerate (empty or zero-mass measure)")]
    DegenerateInformation,

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("bracketing failed: {0}")]
    BracketFailure(String),

    #[error("total mass {0} is not integral; round_to_integer_design requires an integer total")]
    NonIntegralMass(f64),

    #[error("non-integral atom mass {0}; round the design before simulating")]
    NonIntegralDose(f64),

    #[error("degenerate objective: {0}")]
    DegenerateObjective(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable code used by the CLI error JSON.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidMeasure(_) => "invalid_measure",
            Error::InvalidPrior(_) => "invalid_prior",
            Error::IncompatibleCriterion(_) => "incompatible_criterion",
            Error::QuadratureNonConvergent(_) => "quadrature_non_convergent",
            Error::DivergentIntegral(_) => "divergent_integral",
            Error::DegenerateInformation => "degenerate_information",
            Error::Infeasible(_) => "infeasible",
            Error::BracketFailure(_) => "bracket_failure",
            Error::NonIntegralMass(_) => "non_integral_mass",
            Error::NonIntegralDose(_) => "non_integral_dose",
            Error::DegenerateObjective(_) => "degenerate_objective",
        }
    }
}
