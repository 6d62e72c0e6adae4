//! Numerical laboratory for zero-sum games between a singular controller and
//! a stopper.
//!
//! The value of such a game solves a variational inequality with an obstacle
//! constraint `u >= g` and a gradient constraint `|grad u| <= f`. This crate
//! approximates it by a penalized semilinear PDE, solves that PDE by finite
//! differences along a continuation schedule in the penalty parameters, and
//! cross-checks the result against Monte Carlo simulation of the game under
//! the synthesized feedback strategies and against independent brute-force
//! oracles.

pub mod assumptions;
pub mod config;
pub mod expr;
pub mod io;
pub mod kernel;
pub mod model;
pub mod oracles;
pub mod pde;
pub mod sim;
pub mod verify;

pub use assumptions::{validate_assumptions, AssumptionReport, SamplePlan};
pub use expr::{eval_with_derivatives, Derivatives, EvalError, Expression, ParseError};
pub use model::{ProblemSpec, SpecError, SpecSource};
