//! Implicit finite differences for the coupled obstacle system, solved slice
//! by slice with policy iteration.

mod assemble;
mod banded;
mod solver;

pub use assemble::{assemble, assemble_with, DiscreteGenerator, DriftScheme, GeneratorAudit, GeneratorError};
pub use banded::{BandMatrix, Breakdown};
pub use solver::{solve_system, solve_with, HowardLog, PdeError};
