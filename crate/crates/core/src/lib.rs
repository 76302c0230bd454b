//! Continuous optimal experimental design by particle Wasserstein gradient
//! flows.
//!
//! A design is an empirical measure of `N` equally weighted particles. The
//! flow moves the particles along the Wasserstein gradient of a design
//! criterion (D-, A-, c-, L-optimality), or along the steepest-ascent
//! direction of `λ_min` for E-optimality, projecting back onto a compact
//! design space after every step. A particle swarm baseline is included for
//! comparison.

pub mod design;
pub mod error;
pub mod esteep;
pub mod flow;
pub mod models;
pub mod pso;
pub mod subsolver;
pub mod wgrad;

pub use design::{criterion_value, info_matrix, Criterion, CriterionKind, DesignMeasure, InfoMatrix};
pub use error::{DesignError, Result};
pub use esteep::{steepest_direction, steepest_direction_in, AscentDirection, EsteepConfig};
pub use flow::{flow_direction, init_uniform, run, Direction, FlowConfig, FlowTrace, StepMode, Termination, TraceRecord};
pub use models::{ActiveSet, DesignSpace, GlmWeight, RegressionModel};
pub use pso::{pso_ensemble, pso_run, EnsembleSummary, PsoConfig};
pub use subsolver::{brute_oracle, solve, SubproblemSolution, SubsolverConfig};
