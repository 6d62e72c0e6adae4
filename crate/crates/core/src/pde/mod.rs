//! Finite-difference solution of the penalized problem, continuation in the
//! penalty parameters and the variational-inequality diagnostics.

mod continuation;
pub mod grid;
pub mod operator;
pub mod solver;
mod vi;

use thiserror::Error;

use crate::kernel::KernelError;

pub use continuation::{
    continuation, default_schedule, geometric_schedule, ContinuationFailure, ContinuationResult, GridPolicy,
    ScheduleEntry,
};
pub use grid::{Grid, GridField};
pub use operator::{CsrMatrix, Operator};
pub use solver::{
    gamma_step, solve_penalized, solve_penalized_from, BoundConstants, BoundEntry, DataPoint, DataSource,
    gamma_step_with, GradientScheme, LevelData, Method, PenaltyPoint, SolveOptions,
};
pub use vi::{constraint_violations, vi_report, RawData, Region, ViReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdeError {
    #[error("grid: {0}")]
    Grid(String),
    #[error("data: {0}")]
    Data(#[from] KernelError),
    #[error("linear solve failed at time level {level}: {reason}")]
    LinearSolve { level: usize, reason: String },
    #[error("non-finite values at time level {level}")]
    NonFinite { level: usize },
    #[error("no convergence after {iters} iterations (residual {residual:e})")]
    MaxIter { iters: usize, residual: f64 },
    #[error("fixed-point iteration diverged (residual {residual:e})")]
    Divergence { residual: f64 },
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("fields have no common nodes")]
    DisjointDomains,
}

impl PdeError {
    /// Whether the failure is a convergence failure (as opposed to bad input).
    pub fn is_convergence(&self) -> bool {
        matches!(
            self,
            PdeError::LinearSolve { .. } | PdeError::NonFinite { .. } | PdeError::MaxIter { .. } | PdeError::Divergence { .. }
        )
    }
}
