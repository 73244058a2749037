//! Ground-truth statics of a tendon-driven Cosserat rod.
//!
//! The backbone is a Cosserat rod clamped at `s = 0` (`r = 0`, `R = I`) with a
//! free tip at `s = L`. Tendons run helically at fixed radial offsets and load
//! the rod both along its length (curvature of the tendon path) and at the tip
//! (termination point loads). The equilibrium is found by shooting on the six
//! unknown base loads `(n(0), m(0))`.

mod design;
mod integrate;
mod material;
mod shooting;
mod statics;

pub use design::{base_angle, tendon_offset, DesignVector, TendonOffset};
pub use integrate::{integrate_ivp, MIN_STEPS};
pub use material::{stiffness_from_material, StiffnessMatrices, DEFAULT_POISSON};
pub use shooting::{solve_equilibrium, tip_residual, BaseLoads, EquilibriumConfig, SolveStats, SolverConfig};
pub use statics::{rod_ode_rhs, RodContext, RodState, StateDerivative, StrainState};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("input outside domain: {0}")]
    InputDomain(String),
    #[error("6x6 strain-rate system is degenerate at s = {s} (condition number {condition:e})")]
    Degenerate { s: f64, condition: f64 },
    #[error("integration produced a non-finite state at s = {s}")]
    Blowup { s: f64 },
    #[error("shooting did not converge (best residual norm {best_residual:e})")]
    NonConvergence { best_residual: f64 },
}

pub type Result<T> = std::result::Result<T, SolverError>;
