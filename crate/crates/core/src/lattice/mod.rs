//! Markov-chain approximation of the state diffusion and backward
//! induction for the switching system.
//!
//! Three solvers share the chain:
//!
//! * [`solve_zero_switch`]: expected integrated profit with no switching.
//! * [`solve_n_switch`]: values when at most `n` switches are allowed, built
//!   level by level; each level uses the previous one as its obstacle.
//! * [`solve_fixed_point`]: the unconstrained value, computed by a coupled
//!   backward sweep and optionally cross-checked against the level scheme.

mod chain;
mod solver;

pub use crate::field::{Scheme, ValueField};
pub use chain::{ChainError, ConsistencyAudit, MarkovChainApprox};
pub use solver::{
    solve_fixed_point, solve_n_switch, solve_zero_switch, ConvergenceTrace, FixedPointOptions,
    LatticeError, TraceEntry,
};
