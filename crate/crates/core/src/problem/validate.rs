use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use super::SwitchingProblem;
use crate::exprlang::EvalError;
use crate::grid::{SpaceGrid, TimeGrid};

/// Above this mode count the per-point cycle check uses Floyd-Warshall and
/// enumerates cycles only at the tightest point.
const ENUMERATE_MAX_MODES: usize = 6;

pub const CHECK_DIAGONAL: &str = "diagonal-zero";
pub const CHECK_PAIR: &str = "pair-sum-positive";
pub const CHECK_CYCLE: &str = "no-free-loop";
pub const CHECK_TERMINAL: &str = "negative-cost-terminal-zero";
pub const CHECK_COUNT: &str = "negative-cost-count";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidateError {
    #[error("sample grid is empty")]
    Empty,
    #[error("sample grid has no point at the horizon t = {0}")]
    NoTerminal(f64),
    #[error("sample point {index} has dimension {found}, expected {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("cost evaluation failed at t={t}, x={x:?}: {source}")]
    Eval {
        t: f64,
        x: Vec<f64>,
        #[source]
        source: EvalError,
    },
}

/// Finite set of `(t, x)` points on which the cost assumptions are checked.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleGrid {
    points: Vec<(f64, Vec<f64>)>,
}

impl SampleGrid {
    pub fn new(points: Vec<(f64, Vec<f64>)>) -> SampleGrid {
        SampleGrid { points }
    }

    /// Every (time, node) pair of a solver grid.
    pub fn from_grid(space: &SpaceGrid, times: &TimeGrid) -> SampleGrid {
        let nodes = space.points();
        let mut points = Vec::with_capacity(nodes.len() * times.times().len());
        for &t in times.times() {
            for x in &nodes {
                points.push((t, x.clone()));
            }
        }
        SampleGrid { points }
    }

    pub fn extend(&mut self, extra: impl IntoIterator<Item = (f64, Vec<f64>)>) {
        self.points.extend(extra);
    }

    pub fn points(&self) -> &[(f64, Vec<f64>)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Where a check is tightest or violated. Modes are zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub t: f64,
    pub x: Vec<f64>,
    /// A pair `[i, j]`, a cycle `[i1, ..., ir]` (closing back to `i1`) or a single mode.
    pub modes: Vec<usize>,
    pub value: f64,
}

impl Witness {
    pub fn describe(&self) -> String {
        let modes: Vec<String> = self.modes.iter().map(|m| (m + 1).to_string()).collect();
        let mut path = modes.join("->");
        if self.modes.len() > 2 {
            let _ = write!(path, "->{}", self.modes[0] + 1);
        }
        let xs: Vec<String> = self.x.iter().map(|v| format!("{v:?}")).collect();
        format!("t={:?};x={};modes={};value={:?}", self.t, xs.join(","), path, self.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Tightest observed margin (positive = satisfied), when meaningful.
    pub margin: Option<f64>,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub problem_hash: String,
    pub sample_count: usize,
    pub checks: Vec<CheckResult>,
    pub min_pair_sum: Option<f64>,
    pub min_cycle_sum: Option<f64>,
    /// Pairs `(i, j)` with a negative cost at some sample point.
    pub negative_pairs: Vec<(usize, usize)>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Flat `key=value` text.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# switchopt validation report\n");
        let _ = writeln!(s, "problem_hash={}", self.problem_hash);
        let _ = writeln!(s, "samples={}", self.sample_count);
        s += "scope=cost assumptions checked on the sampled points only; polynomial growth of profits and costs is the user's obligation\n";
        let _ = writeln!(s, "overall={}", pass_fail(self.passed()));
        for c in &self.checks {
            let _ = writeln!(s, "check.{}={}", c.name, pass_fail(c.passed));
            if let Some(m) = c.margin {
                let _ = writeln!(s, "check.{}.margin={m:?}", c.name);
            }
            if let Some(w) = &c.witness {
                let _ = writeln!(s, "check.{}.witness={}", c.name, w.describe());
            }
        }
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |v| format!("{v:?}"));
        let _ = writeln!(s, "min_pair_sum={}", opt(self.min_pair_sum));
        let _ = writeln!(s, "min_cycle_sum={}", opt(self.min_cycle_sum));
        let pairs: Vec<String> = self
            .negative_pairs
            .iter()
            .map(|(i, j)| format!("{}->{}", i + 1, j + 1))
            .collect();
        let _ = writeln!(s, "negative_pairs={}", self.negative_pairs.len());
        let _ = writeln!(s, "negative_pair_list={}", pairs.join(","));
        s
    }
}

fn pass_fail(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

/// Every simple cycle over `m` modes, listed once with its smallest mode first.
pub(crate) fn simple_cycles(m: usize) -> Vec<Vec<usize>> {
    fn extend(path: &mut Vec<usize>, used: &mut [bool], m: usize, out: &mut Vec<Vec<usize>>) {
        if path.len() >= 2 {
            out.push(path.clone());
        }
        for v in path[0] + 1..m {
            if !used[v] {
                used[v] = true;
                path.push(v);
                extend(path, used, m, out);
                path.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    for s in 0..m {
        let mut used = vec![false; m];
        used[s] = true;
        extend(&mut vec![s], &mut used, m, &mut out);
    }
    out
}

/// Sum of `g` along `cycle` and back to its start, left to right.
pub(crate) fn cycle_sum(g: &[f64], m: usize, cycle: &[usize]) -> f64 {
    let mut s = 0.0;
    for w in 0..cycle.len() {
        let a = cycle[w];
        let b = cycle[(w + 1) % cycle.len()];
        s += g[a * m + b];
    }
    s
}

fn min_cycle_enumerated(g: &[f64], m: usize, cycles: &[Vec<usize>]) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (k, c) in cycles.iter().enumerate() {
        let s = cycle_sum(g, m, c);
        if best.map_or(true, |(b, _)| s < b) {
            best = Some((s, k));
        }
    }
    best
}

/// Lightest closed walk; equals the lightest simple cycle in sign.
fn min_closed_walk(g: &[f64], m: usize) -> f64 {
    let mut d: Vec<f64> = g.to_vec();
    for i in 0..m {
        d[i * m + i] = f64::INFINITY;
    }
    for k in 0..m {
        for i in 0..m {
            let dik = d[i * m + k];
            if dik == f64::INFINITY {
                continue;
            }
            for j in 0..m {
                let v = dik + d[k * m + j];
                if v < d[i * m + j] {
                    d[i * m + j] = v;
                }
            }
        }
    }
    (0..m).map(|i| d[i * m + i]).fold(f64::INFINITY, f64::min)
}

struct Tightest {
    value: f64,
    witness: Option<Witness>,
}

impl Tightest {
    fn new() -> Tightest {
        Tightest {
            value: f64::INFINITY,
            witness: None,
        }
    }

    fn offer(&mut self, value: f64, t: f64, x: &[f64], modes: impl FnOnce() -> Vec<usize>) {
        if value < self.value {
            self.value = value;
            self.witness = Some(Witness {
                t,
                x: x.to_vec(),
                modes: modes(),
                value,
            });
        }
    }
}

/// Checks the switching-cost assumptions on every point of `grid`:
/// zero diagonal, strictly positive pair sums, strictly positive cycle sums,
/// negative costs vanishing at the horizon, and at most `K` negative pairs.
pub fn validate(p: &SwitchingProblem, grid: &SampleGrid) -> Result<ValidationReport, ValidateError> {
    if grid.is_empty() {
        return Err(ValidateError::Empty);
    }
    let k = p.state_dim();
    for (index, (_, x)) in grid.points().iter().enumerate() {
        if x.len() != k {
            return Err(ValidateError::Dimension {
                index,
                expected: k,
                found: x.len(),
            });
        }
    }
    let horizon = p.horizon();
    if !grid.points().iter().any(|(t, _)| *t == horizon) {
        return Err(ValidateError::NoTerminal(horizon));
    }

    let m = p.mode_count();
    let cycles = if m <= ENUMERATE_MAX_MODES {
        simple_cycles(m)
    } else {
        Vec::new()
    };
    let mut g = vec![0.0; m * m];
    let mut diag = Tightest::new();
    let mut pair = Tightest::new();
    let mut cycle = Tightest::new();
    let mut negative = BTreeSet::new();
    let mut terminal_rows: Vec<(usize, Vec<f64>)> = Vec::new();

    for (idx, (t, x)) in grid.points().iter().enumerate() {
        let (t, x) = (*t, x.as_slice());
        for i in 0..m {
            for j in 0..m {
                let v = if i == j {
                    p.diagonal_cost(i, t, x)
                } else {
                    p.switch_cost(i, j, t, x)
                };
                g[i * m + j] = v.map_err(|source| ValidateError::Eval {
                    t,
                    x: x.to_vec(),
                    source,
                })?;
            }
        }
        for i in 0..m {
            diag.offer(-g[i * m + i].abs(), t, x, || vec![i]);
            for j in 0..m {
                if i != j && g[i * m + j] < 0.0 {
                    negative.insert((i, j));
                }
                if i < j {
                    pair.offer(g[i * m + j] + g[j * m + i], t, x, || vec![i, j]);
                }
            }
        }
        if m >= 2 {
            if m <= ENUMERATE_MAX_MODES {
                if let Some((s, c)) = min_cycle_enumerated(&g, m, &cycles) {
                    cycle.offer(s, t, x, || cycles[c].clone());
                }
            } else {
                let s = min_closed_walk(&g, m);
                if s < cycle.value {
                    // Exact sum and witness at the candidate point.
                    let all = simple_cycles(m);
                    if let Some((s, c)) = min_cycle_enumerated(&g, m, &all) {
                        cycle.offer(s, t, x, || all[c].clone());
                    }
                }
            }
        }
        if t == horizon {
            terminal_rows.push((idx, g.clone()));
        }
    }

    let mut terminal = Tightest::new();
    for &(i, j) in &negative {
        for (idx, row) in &terminal_rows {
            let (t, x) = &grid.points()[*idx];
            terminal.offer(-row[i * m + j].abs(), *t, x, || vec![i, j]);
        }
    }

    let mut checks = Vec::with_capacity(5);
    checks.push(CheckResult {
        name: CHECK_DIAGONAL,
        passed: diag.value == 0.0,
        margin: Some(diag.value),
        witness: (diag.value != 0.0).then_some(diag.witness).flatten(),
    });
    let finite = |v: f64| v.is_finite().then_some(v);
    checks.push(CheckResult {
        name: CHECK_PAIR,
        passed: m < 2 || pair.value > 0.0,
        margin: finite(pair.value),
        witness: pair.witness,
    });
    checks.push(CheckResult {
        name: CHECK_CYCLE,
        passed: m < 2 || cycle.value > 0.0,
        margin: finite(cycle.value),
        witness: cycle.witness,
    });
    checks.push(CheckResult {
        name: CHECK_TERMINAL,
        passed: negative.is_empty() || terminal.value == 0.0,
        margin: finite(terminal.value),
        witness: (terminal.value != 0.0).then_some(terminal.witness).flatten(),
    });
    let count = negative.len();
    checks.push(CheckResult {
        name: CHECK_COUNT,
        passed: count <= p.neg_cost_bound(),
        margin: Some(p.neg_cost_bound() as f64 - count as f64),
        witness: None,
    });

    Ok(ValidationReport {
        problem_hash: p.hash().to_string(),
        sample_count: grid.len(),
        checks,
        min_pair_sum: finite(pair.value),
        min_cycle_sum: finite(cycle.value),
        negative_pairs: negative.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::ProblemSource;

    fn grid_t01() -> SampleGrid {
        SampleGrid::new(vec![
            (0.0, vec![0.0]),
            (0.5, vec![1.0]),
            (1.0, vec![0.0]),
            (1.0, vec![2.0]),
        ])
    }

    #[test]
    fn constant_positive_costs_pass() {
        let p = ProblemSource::one_dim(1.0, "0", "1", &["0", "0"], &[&["0", "1"], &["1", "0"]], 0.0)
            .compile()
            .unwrap();
        let r = validate(&p, &grid_t01()).unwrap();
        assert!(r.passed(), "{}", r.to_text());
        assert_eq!(r.min_pair_sum, Some(2.0));
    }

    #[test]
    fn zero_sum_three_cycle_fails_with_witness() {
        let p = ProblemSource::one_dim(
            1.0,
            "0",
            "1",
            &["0", "0", "0"],
            &[&["0", "1", "3"], &["3", "0", "1"], &["-2", "3", "0"]],
            0.0,
        )
        .with_neg_cost_bound(3)
        .compile()
        .unwrap();
        let r = validate(&p, &grid_t01()).unwrap();
        assert!(!r.passed());
        let c = r.check(CHECK_CYCLE).unwrap();
        assert!(!c.passed);
        let w = c.witness.as_ref().unwrap();
        assert_eq!(w.modes, vec![0, 1, 2]);
        assert_eq!(w.value, 0.0);
        assert!(r.check(CHECK_PAIR).unwrap().passed);
        assert!(r.to_text().contains("modes=1->2->3->1"));
    }

    #[test]
    fn vanishing_negative_cost_passes() {
        let p = ProblemSource::one_dim(1.0, "0", "1", &["0", "0"], &[&["0", "-(1 - t)"], &["3", "0"]], 0.0)
            .with_neg_cost_bound(1)
            .compile()
            .unwrap();
        let r = validate(&p, &grid_t01()).unwrap();
        assert!(r.passed(), "{}", r.to_text());
        assert_eq!(r.min_pair_sum, Some(2.0));
        assert_eq!(r.negative_pairs, vec![(0, 1)]);

        // Same instance with K = 0 exceeds the bound.
        let p = ProblemSource::one_dim(1.0, "0", "1", &["0", "0"], &[&["0", "-(1 - t)"], &["3", "0"]], 0.0)
            .compile()
            .unwrap();
        let r = validate(&p, &grid_t01()).unwrap();
        assert!(!r.check(CHECK_COUNT).unwrap().passed);
    }

    #[test]
    fn negative_cost_must_vanish_at_horizon() {
        let p = ProblemSource::one_dim(1.0, "0", "1", &["0", "0"], &[&["0", "-0.5"], &["3", "0"]], 0.0)
            .with_neg_cost_bound(1)
            .compile()
            .unwrap();
        let r = validate(&p, &grid_t01()).unwrap();
        let c = r.check(CHECK_TERMINAL).unwrap();
        assert!(!c.passed);
        assert_eq!(c.witness.as_ref().unwrap().t, 1.0);
    }

    #[test]
    fn zero_pair_sum_fails_strictly() {
        let p = ProblemSource::one_dim(1.0, "0", "1", &["0", "0"], &[&["0", "0"], &["0", "0"]], 0.0)
            .compile()
            .unwrap();
        let r = validate(&p, &grid_t01()).unwrap();
        assert!(!r.check(CHECK_PAIR).unwrap().passed);
        assert!(!r.check(CHECK_CYCLE).unwrap().passed);
    }

    #[test]
    fn nonzero_diagonal_fails() {
        let p = ProblemSource::one_dim(1.0, "0", "1", &["0", "0"], &[&["0.1", "1"], &["1", "0"]], 0.0)
            .compile()
            .unwrap();
        let r = validate(&p, &grid_t01()).unwrap();
        assert!(!r.check(CHECK_DIAGONAL).unwrap().passed);
    }

    #[test]
    fn single_mode_passes_trivially() {
        let p = ProblemSource::one_dim(1.0, "0", "1", &["1"], &[&["0"]], 0.0).compile().unwrap();
        let r = validate(&p, &grid_t01()).unwrap();
        assert!(r.passed());
        assert_eq!(r.min_pair_sum, None);
    }

    #[test]
    fn grid_preconditions() {
        let p = ProblemSource::one_dim(1.0, "0", "1", &["1"], &[&["0"]], 0.0).compile().unwrap();
        assert!(matches!(validate(&p, &SampleGrid::default()), Err(ValidateError::Empty)));
        let no_t = SampleGrid::new(vec![(0.0, vec![0.0])]);
        assert!(matches!(validate(&p, &no_t), Err(ValidateError::NoTerminal(_))));
        let bad = SampleGrid::new(vec![(1.0, vec![0.0, 1.0])]);
        assert!(matches!(validate(&p, &bad), Err(ValidateError::Dimension { .. })));
    }

    #[test]
    fn cycle_enumeration_counts() {
        // sum_{r>=2} C(m, r) (r - 1)!
        assert_eq!(simple_cycles(2).len(), 1);
        assert_eq!(simple_cycles(3).len(), 3 + 2);
        assert_eq!(simple_cycles(4).len(), 6 + 8 + 6);
    }

    #[test]
    fn floyd_warshall_agrees_in_sign_with_enumeration() {
        let m = 4;
        let g = [
            0.0, 1.0, 2.0, -1.0, //
            0.5, 0.0, -0.4, 3.0, //
            1.0, 0.2, 0.0, 0.7, //
            1.2, 2.0, 0.1, 0.0,
        ];
        let (e, _) = min_cycle_enumerated(&g, m, &simple_cycles(m)).unwrap();
        let f = min_closed_walk(&g, m);
        assert!(e < 0.0 && f < 0.0, "{e} vs {f}");

        let h = [
            0.0, 1.0, 2.0, -0.5, //
            0.5, 0.0, 0.4, 3.0, //
            1.0, 0.2, 0.0, 0.7, //
            1.2, 2.0, 0.1, 0.0,
        ];
        let (e, _) = min_cycle_enumerated(&h, m, &simple_cycles(m)).unwrap();
        let f = min_closed_walk(&h, m);
        assert!(e > 0.0 && (e - f).abs() < 1e-12, "{e} vs {f}");
    }
}
