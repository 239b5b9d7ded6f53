//! Problem instances shared by the benchmarks.

use switchopt_core::{Axis, GridSpec, ProblemSource, SwitchingProblem};

/// Two-mode plant on a geometric Brownian motion started at 4.
pub fn plant() -> SwitchingProblem {
    ProblemSource::one_dim(
        1.0,
        "0.05*x1",
        "0.2*x1",
        &["x1 - 4", "2 - 0.5*x1"],
        &[&["0", "0.3"], &["0.3", "0"]],
        4.0,
    )
    .compile()
    .expect("benchmark problem compiles")
}

/// Three modes with a subsidised move out of mode 1.
pub fn three_modes() -> SwitchingProblem {
    ProblemSource::one_dim(
        1.0,
        "0.05*x1",
        "0.2*x1",
        &["x1 - 4", "2 - 0.5*x1", "0.3*x1 - 0.5"],
        &[
            &["0", "-0.2*(1 - t)", "0.4"],
            &["0.5", "0", "0.3"],
            &["0.4", "0.3", "0"],
        ],
        4.0,
    )
    .with_neg_cost_bound(1)
    .compile()
    .expect("benchmark problem compiles")
}

/// `[0, 9.95]` with `nodes` points and `steps` time steps.
pub fn grid(nodes: usize, steps: usize) -> GridSpec {
    GridSpec::new(vec![Axis::new(0.0, 9.95, nodes)], steps).expect("valid grid")
}
