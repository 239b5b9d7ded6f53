//! Numerical solvers for the finite-horizon multi-mode optimal switching
//! problem with signed switching costs.
//!
//! * [`exprlang`]: coefficient functions of `(t, x)` written as expressions.
//! * [`problem`]: problem instances and the cost-structure validator.
//! * [`lattice`]: Markov-chain approximation and backward induction.
//! * [`pde`]: implicit finite differences with policy iteration.
//! * [`sim`]: policy extraction and Monte Carlo strategy evaluation.

pub mod exprlang;
pub mod field;
pub mod grid;
pub mod lattice;
pub mod pde;
pub mod problem;
pub mod sim;

pub use exprlang::{EvalError, Expr, ParseError};
pub use field::{Scheme, ValueField};
pub use grid::{Axis, GridSpec, SpaceGrid, StencilMode, TimeGrid};
pub use lattice::{ConvergenceTrace, MarkovChainApprox};
pub use problem::{ProblemSource, SampleGrid, SwitchingProblem, ValidationReport};
pub use sim::{Decision, StrategyStats, SwitchingPolicy};
