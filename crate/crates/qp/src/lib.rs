//! Sparse solver for linearly constrained convex quadratic programs.
//!
//! The solver is an operator-splitting (ADMM) method on the quasi-definite
//! KKT system, with a sparse LDLᵀ factorization that is cached across calls
//! sharing a sparsity pattern, followed by an active-set polishing step.

pub mod admm;
pub mod error;
pub mod ldl;
pub mod ordering;
pub mod problem;
pub mod solution;
pub mod sparse;

pub use admm::{solve, Settings, Solver, WarmStart};
pub use error::QpError;
pub use problem::QpProblem;
pub use solution::{kkt_residuals, residuals_of, write_iteration_log, IterationRecord, KktResiduals, QpSolution, QpStatus};
pub use sparse::{CscMatrix, Triplets};
