//! Optimal one-stage designs for volume-constrained dilution experiments.
//!
//! The library optimizes Fisher-information criteria over atomic design
//! measures under a total-mass equality and a volume-budget inequality,
//! verifies first-order optimality certificates, provides fast exact
//! solvers for the equal-dose (one-atom) design class, and validates
//! designs by Monte Carlo simulation of the dilution experiment.

pub mod criteria;
pub mod error;
pub mod kernels;
pub mod measure;
pub mod one_atom;
pub mod optimizer;
pub mod priors;
pub mod quad;
pub mod scalar;
pub mod simulate;

pub use error::{Error, Result};
pub use measure::{Atom, ConstraintSpec, DesignMeasure};
pub use priors::Prior;
pub use quad::QuadratureConfig;
