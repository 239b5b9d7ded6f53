use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::exprlang::EvalError;
use crate::field::{Scheme, ValueField};
use crate::grid::{SpaceGrid, TimeGrid};
use crate::problem::{ProblemTables, SwitchingProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Continue,
    /// Switch into this (0-based) mode.
    SwitchTo(usize),
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::Continue => f.write_str("continue"),
            Decision::SwitchTo(j) => write!(f, "switch-to-{}", j + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("value field was solved for problem {field}, not {problem}")]
    ProblemMismatch { field: String, problem: String },
    #[error("value field has {field} modes, the problem has {problem}")]
    Modes { field: usize, problem: usize },
    #[error("tolerance must be positive")]
    Tolerance,
    #[error("coefficient evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

/// Feedback switching rule on the grid of a value field.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingPolicy {
    modes: usize,
    times: TimeGrid,
    grid: SpaceGrid,
    /// `[time][node][mode]`
    decisions: Vec<Decision>,
    problem_hash: String,
    source: Scheme,
    tol: f64,
}

impl SwitchingPolicy {
    /// Policy that never switches.
    pub fn never(p: &SwitchingProblem, times: TimeGrid, grid: SpaceGrid) -> SwitchingPolicy {
        let len = times.times().len() * grid.node_count() * p.mode_count();
        SwitchingPolicy {
            modes: p.mode_count(),
            times,
            grid,
            decisions: vec![Decision::Continue; len],
            problem_hash: p.hash().to_string(),
            source: Scheme::Level(0),
            tol: 0.0,
        }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn times(&self) -> &TimeGrid {
        &self.times
    }

    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }

    pub fn problem_hash(&self) -> &str {
        &self.problem_hash
    }

    /// Scheme of the value field the policy was read from.
    pub fn source(&self) -> Scheme {
        self.source
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    #[inline]
    fn idx(&self, n: usize, node: usize, i: usize) -> usize {
        (n * self.grid.node_count() + node) * self.modes + i
    }

    #[inline]
    pub fn decision(&self, n: usize, node: usize, i: usize) -> Decision {
        self.decisions[self.idx(n, node, i)]
    }

    pub fn set(&mut self, n: usize, node: usize, i: usize, d: Decision) {
        let k = self.idx(n, node, i);
        self.decisions[k] = d;
    }

    /// Decision at the grid node nearest to `x`.
    pub fn lookup(&self, n: usize, x: &[f64], i: usize) -> Decision {
        self.decision(n, self.grid.nearest_node(x), i)
    }

    /// Region map of mode `i`: one row per time index, one column per node,
    /// entries `0` (continue) or the 1-based target mode.
    pub fn region(&self, i: usize) -> Vec<Vec<usize>> {
        (0..self.times.times().len())
            .map(|n| {
                (0..self.grid.node_count())
                    .map(|node| match self.decision(n, node, i) {
                        Decision::Continue => 0,
                        Decision::SwitchTo(j) => j + 1,
                    })
                    .collect()
            })
            .collect()
    }

    /// [`Self::region`] as CSV with a header of node coordinates (1D) or node
    /// indices (2D), and the time in the first column.
    pub fn region_csv(&self, i: usize) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# problem_hash={}", self.problem_hash);
        let _ = writeln!(s, "# mode={} grid={}", i + 1, self.grid);
        s += "t";
        for node in 0..self.grid.node_count() {
            if self.grid.dim() == 1 {
                let _ = write!(s, ",{:?}", self.grid.point(node)[0]);
            } else {
                let _ = write!(s, ",n{node}");
            }
        }
        s.push('\n');
        for (n, row) in self.region(i).iter().enumerate() {
            let _ = write!(s, "{:?}", self.times.times()[n]);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Reads the optimal feedback rule off a solved value field.
///
/// Mode `i` switches to `argmax_j (-g_ij + V_j)` (smallest `j` on ties)
/// wherever `V_i <= max_j (-g_ij + V_j) + tol`, and continues elsewhere.
/// Nothing happens at the horizon.
pub fn extract_policy(v: &ValueField, p: &SwitchingProblem, tol: f64) -> Result<SwitchingPolicy, PolicyError> {
    if !(tol > 0.0) {
        return Err(PolicyError::Tolerance);
    }
    if v.problem_hash() != p.hash() {
        return Err(PolicyError::ProblemMismatch {
            field: v.problem_hash().to_string(),
            problem: p.hash().to_string(),
        });
    }
    if v.modes() != p.mode_count() {
        return Err(PolicyError::Modes {
            field: v.modes(),
            problem: p.mode_count(),
        });
    }
    let m = v.modes();
    let tables = ProblemTables::sample(p, v.grid(), v.times())?;
    let mut policy = SwitchingPolicy::never(p, v.times().clone(), v.grid().clone());
    policy.source = v.scheme();
    policy.tol = tol;
    for n in 0..v.steps() {
        for node in 0..v.grid().node_count() {
            let g = tables.cost_matrix(n, node);
            for i in 0..m {
                let mut best = None;
                let mut best_val = f64::NEG_INFINITY;
                for j in (0..m).filter(|&j| j != i) {
                    let cand = -g[i * m + j] + v.get(j, n, node);
                    if cand > best_val {
                        best_val = cand;
                        best = Some(j);
                    }
                }
                if let Some(j) = best {
                    if v.get(i, n, node) <= best_val + tol {
                        policy.set(n, node, i, Decision::SwitchTo(j));
                    }
                }
            }
        }
    }
    Ok(policy)
}
