use std::fmt::Write as _;

use thiserror::Error;

use super::assemble::{assemble, DiscreteGenerator, GeneratorError};
use super::banded::BandMatrix;
use crate::exprlang::EvalError;
use crate::field::{Scheme, ValueField};
use crate::grid::{SpaceGrid, TimeGrid};
use crate::problem::{ProblemTables, SwitchingProblem};

/// Margin by which switching must beat continuing to be selected.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PdeError {
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("coefficient evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("time grid horizon {grid} differs from the problem horizon {problem}")]
    Horizon { grid: f64, problem: f64 },
    #[error("policy iteration did not settle at time index {time_index} after {iterations} iterations")]
    NotConverged { time_index: usize, iterations: usize },
    #[error("linear solver broke down at time index {time_index} (row {row}, pivot {pivot:.3e})")]
    LinearBreakdown {
        time_index: usize,
        row: usize,
        pivot: f64,
    },
}

/// Policy iterations spent on each time slice.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HowardLog {
    /// `iterations[n]` for time index `n`; the terminal slice has none.
    pub iterations: Vec<usize>,
}

impl HowardLog {
    pub fn total(&self) -> usize {
        self.iterations.iter().sum()
    }

    pub fn max(&self) -> usize {
        self.iterations.iter().copied().max().unwrap_or(0)
    }

    pub fn to_text(&self, problem_hash: &str) -> String {
        let mut s = String::from("# switchopt howard log v1\n");
        let _ = writeln!(s, "# problem_hash={problem_hash}");
        s += "time_index,iterations\n";
        for (n, k) in self.iterations.iter().enumerate() {
            let _ = writeln!(s, "{n},{k}");
        }
        s
    }

    /// Parses [`Self::to_text`] output; returns the problem hash too.
    pub fn from_text(text: &str) -> Option<(String, HowardLog)> {
        let mut hash = None;
        let mut rows = Vec::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# problem_hash=") {
                hash = Some(rest.to_string());
            } else if line.starts_with('#') || line.starts_with("time_index") || line.trim().is_empty() {
                continue;
            } else {
                let (n, k) = line.split_once(',')?;
                rows.push((n.parse::<usize>().ok()?, k.parse::<usize>().ok()?));
            }
        }
        rows.sort_unstable();
        let iterations = rows.into_iter().map(|r| r.1).collect();
        Some((hash?, HowardLog { iterations }))
    }
}

const CONTINUE: usize = usize::MAX;

struct Slicer<'a> {
    gen: &'a DiscreteGenerator,
    tables: &'a ProblemTables,
    m: usize,
    nodes: usize,
}

impl Slicer<'_> {
    fn build(&self, n: usize, dt: f64, policy: &[usize], next: &[f64], a: &mut BandMatrix, rhs: &mut [f64]) {
        a.clear();
        let m = self.m;
        for node in 0..self.nodes {
            for i in 0..m {
                let r = node * m + i;
                match policy[r] {
                    CONTINUE => {
                        a.add(r, r, 1.0);
                        for (col, w) in self.gen.row(n, node) {
                            a.add(r, col * m + i, -dt * w);
                        }
                        rhs[r] = next[r] + dt * self.tables.psi(n, node, i);
                    }
                    j => {
                        a.add(r, r, 1.0);
                        a.add(r, node * m + j, -1.0);
                        rhs[r] = -self.tables.cost(n, node, i, j);
                    }
                }
            }
        }
    }

    /// Continuation residual `(I - dt A) v_i - v_next - dt psi` at unknown `r`.
    fn continue_residual(&self, n: usize, dt: f64, v: &[f64], next: &[f64], node: usize, i: usize) -> f64 {
        let m = self.m;
        let av: f64 = self.gen.row(n, node).map(|(c, w)| w * v[c * m + i]).sum();
        let r = node * m + i;
        v[r] - dt * av - next[r] - dt * self.tables.psi(n, node, i)
    }

    /// Greedy policy improvement; returns true if anything changed.
    fn improve(&self, n: usize, dt: f64, v: &[f64], next: &[f64], policy: &mut [usize]) -> bool {
        let m = self.m;
        let mut changed = false;
        let mut scores = vec![0.0; m];
        let mut choice = vec![CONTINUE; m];
        for node in 0..self.nodes {
            let g = self.tables.cost_matrix(n, node);
            for i in 0..m {
                let cont = self.continue_residual(n, dt, v, next, node, i);
                let vi = v[node * m + i];
                let mut best = CONTINUE;
                let mut best_res = f64::INFINITY;
                for j in (0..m).filter(|&j| j != i) {
                    let res = vi + g[i * m + j] - v[node * m + j];
                    if res < best_res - TIE_TOL {
                        best = j;
                        best_res = res;
                    }
                }
                if best != CONTINUE && best_res < cont - TIE_TOL {
                    choice[i] = best;
                    scores[i] = cont - best_res;
                } else {
                    choice[i] = CONTINUE;
                }
            }
            break_cycles(&mut choice, &scores);
            for i in 0..m {
                if policy[node * m + i] != choice[i] {
                    policy[node * m + i] = choice[i];
                    changed = true;
                }
            }
        }
        changed
    }
}

/// Removes switching cycles among the modes of one node by letting the
/// weakest switch in each cycle continue instead.
fn break_cycles(choice: &mut [usize], scores: &[f64]) {
    let m = choice.len();
    loop {
        let mut found = None;
        'start: for s in 0..m {
            let mut seen = vec![false; m];
            let mut k = s;
            while choice[k] != CONTINUE {
                if seen[k] {
                    found = Some(k);
                    break 'start;
                }
                seen[k] = true;
                k = choice[k];
            }
        }
        let Some(start) = found else { return };
        let mut weakest = start;
        let mut k = choice[start];
        while k != start {
            if scores[k] < scores[weakest] {
                weakest = k;
            }
            k = choice[k];
        }
        choice[weakest] = CONTINUE;
    }
}

/// Solves the coupled obstacle system by implicit Euler in time and Howard
/// policy iteration on each slice.
///
/// Unknowns of a slice are ordered node-major (`node * m + mode`). Given a
/// decision per unknown, continuation rows come from `I - dt A_h` and switch
/// rows pin `v_i - v_j = -g_ij`; all modes are solved in one banded system.
/// Each slice starts from the decisions of the slice after it.
pub fn solve_system(
    p: &SwitchingProblem,
    grid: &SpaceGrid,
    times: &TimeGrid,
) -> Result<(ValueField, HowardLog), PdeError> {
    if (times.horizon() - p.horizon()).abs() > 1e-12 * p.horizon().max(1.0) {
        return Err(PdeError::Horizon {
            grid: times.horizon(),
            problem: p.horizon(),
        });
    }
    let gen = assemble(p, grid, times)?;
    let tables = ProblemTables::sample(p, grid, times)?;
    solve_with(p, &gen, &tables, times)
}

/// Same as [`solve_system`] with a pre-assembled generator and sampled tables.
pub fn solve_with(
    p: &SwitchingProblem,
    gen: &DiscreteGenerator,
    tables: &ProblemTables,
    times: &TimeGrid,
) -> Result<(ValueField, HowardLog), PdeError> {
    let m = p.mode_count();
    let grid = gen.grid();
    let nodes = grid.node_count();
    let size = nodes * m;
    let band = gen.bandwidth() * m;
    let s = Slicer {
        gen,
        tables,
        m,
        nodes,
    };
    let mut field = ValueField::zeros(m, times.clone(), grid.clone(), p.hash(), Scheme::Pde);
    let mut log = HowardLog {
        iterations: vec![0; times.steps()],
    };
    let mut policy = vec![CONTINUE; size];
    let mut next = vec![0.0; size];
    let mut v = vec![0.0; size];
    let mut rhs = vec![0.0; size];
    let mut a = BandMatrix::zeros(size, band, band);
    let cap = (m * nodes).max(1);
    for n in (0..times.steps()).rev() {
        let dt = times.dt(n);
        let mut iterations = 0;
        loop {
            iterations += 1;
            s.build(n, dt, &policy, &next, &mut a, &mut rhs);
            a.factor().map_err(|b| PdeError::LinearBreakdown {
                time_index: n,
                row: b.row,
                pivot: b.pivot,
            })?;
            v.copy_from_slice(&rhs);
            a.solve_in_place(&mut v);
            if m < 2 || !s.improve(n, dt, &v, &next, &mut policy) {
                break;
            }
            if iterations >= cap {
                return Err(PdeError::NotConverged {
                    time_index: n,
                    iterations,
                });
            }
        }
        log.iterations[n] = iterations;
        for node in 0..nodes {
            for i in 0..m {
                field.set(i, n, node, v[node * m + i]);
            }
        }
        std::mem::swap(&mut next, &mut v);
    }
    Ok((field, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;
    use crate::problem::ProblemSource;

    fn grid(lo: f64, hi: f64, n: usize) -> SpaceGrid {
        SpaceGrid::new(vec![Axis::new(lo, hi, n)]).unwrap()
    }

    #[test]
    fn single_mode_constant_profit() {
        let p = ProblemSource::one_dim(2.0, "0.05*x1", "0.2*x1", &["1.5"], &[&["0"]], 1.0)
            .compile()
            .unwrap();
        let (v, log) = solve_system(&p, &grid(0.0, 3.0, 31), &TimeGrid::uniform(2.0, 40)).unwrap();
        for node in 0..31 {
            assert!((v.get(0, 0, node) - 3.0).abs() < 1e-8);
        }
        assert!(log.iterations.iter().all(|&k| k == 1));
        assert!(v.terminal_is_zero());
    }

    #[test]
    fn symmetric_modes_agree() {
        let p = ProblemSource::one_dim(1.0, "0", "0.5", &["x1", "-x1"], &[&["0", "0.2"], &["0.2", "0"]], 0.0)
            .compile()
            .unwrap();
        let (v, _) = solve_system(&p, &grid(-2.0, 2.0, 41), &TimeGrid::uniform(1.0, 50)).unwrap();
        for n in 0..=50 {
            for node in 0..41 {
                let mirror = 40 - node;
                assert!((v.get(0, n, node) - v.get(1, n, mirror)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn log_round_trip() {
        let log = HowardLog {
            iterations: vec![3, 2, 1],
        };
        let (h, back) = HowardLog::from_text(&log.to_text("abc")).unwrap();
        assert_eq!(h, "abc");
        assert_eq!(back, log);
    }

    #[test]
    fn cycle_breaking_keeps_the_strongest_switches() {
        let mut choice = vec![1, 2, 0];
        break_cycles(&mut choice, &[3.0, 1.0, 2.0]);
        assert_eq!(choice, vec![1, CONTINUE, 0]);
    }
}
