//! Convex quadratic programming layer: solve, validate, and differentiate.
//!
//! [`solve`] runs a presolved primal-dual interior-point method. [`backward`]
//! turns a loss gradient on the primal solution into gradients on every data
//! block by implicit differentiation of the KKT conditions at the optimum.

mod backward;
mod io;
mod ipm;
mod presolve;
mod problem;

pub use backward::{
    backward, backward_through_map, backward_with, BackwardSettings, DataBlock, DataEntry,
    SensitivityWarning, SolutionSensitivity, SparseLinearMap,
};
pub use io::{dump_problem, load_problem, read_problem, write_problem};
pub use ipm::{solve, solve_with};
pub use problem::{kkt_parts, kkt_residual, KktParts, QpProblem, QpSolution, QpStatus};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite problem data")]
    NonFinite,
    #[error("Q is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("Q is not positive semidefinite")]
    NotPsd,
    #[error("invalid solver settings: {0}")]
    InvalidSettings(String),
    #[error("problem is infeasible")]
    Infeasible,
    #[error("problem is unbounded")]
    Unbounded,
    #[error("no convergence after {iterations} iterations (KKT residual {residual:.3e})")]
    MaxIter { iterations: usize, residual: f64 },
    #[error("backward pass requires an optimal solution")]
    NotOptimal,
    #[error("KKT system is singular: {0}")]
    SingularKkt(String),
    #[error("malformed problem file: {0}")]
    Format(String),
}

/// Interior-point knobs. The defaults match [`solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub tolerance: f64,
    pub max_iter: usize,
    /// iterate until the residual of the reduced problem is below
    /// `tolerance * inner_tolerance_factor`
    pub inner_tolerance_factor: f64,
    pub static_reg: f64,
    pub dynamic_eps: f64,
    pub dynamic_delta: f64,
    pub refine_steps: usize,
    pub step_fraction: f64,
    pub divergence_threshold: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iter: 100,
            inner_tolerance_factor: 0.5,
            static_reg: 1e-9,
            dynamic_eps: 1e-13,
            dynamic_delta: 1e-10,
            refine_steps: 20,
            step_fraction: 0.99,
            divergence_threshold: 1e8,
        }
    }
}
