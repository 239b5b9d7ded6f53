use std::fmt::Write as _;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::chain::MarkovChainApprox;
use crate::exprlang::EvalError;
use crate::field::{Scheme, ValueField};
use crate::problem::{ProblemTables, SwitchingProblem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatticeError {
    #[error("chain was built for problem {chain}, not {problem}")]
    ProblemMismatch { chain: String, problem: String },
    #[error("coefficient evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("n-switch levels did not converge within {} levels (last increment {:.3e})", .trace.entries.len().saturating_sub(1), .trace.last_increment())]
    NotConverged { trace: ConvergenceTrace },
    #[error(
        "instantaneous switching loop at time index {time_index}, node {node}: \
         same-slice sweeps kept increasing values after {sweeps} passes"
    )]
    SwitchingLoop {
        time_index: usize,
        node: usize,
        sweeps: usize,
    },
    #[error("coupled sweep and n-switch limit disagree by {discrepancy:.3e} (tolerance {tol:.3e})")]
    ModeDisagreement { discrepancy: f64, tol: f64 },
    #[error("tolerance must be positive")]
    Tolerance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub level: usize,
    /// `max |V^l - V^(l-1)|` (zero for level 0).
    pub sup_increment: f64,
    /// `min (V^l - V^(l-1))`; non-negative up to rounding.
    pub min_increment: f64,
    /// Same-slice obstacle passes (one per level in the n-switch scheme).
    pub sweeps: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceTrace {
    pub entries: Vec<TraceEntry>,
    /// Normalization `1 + |psi|_inf T` applied to `tol`.
    pub scale: f64,
    /// Largest number of value-changing same-slice passes in the coupled sweep.
    pub max_sweeps: usize,
    /// Sup distance between coupled sweep and n-switch limit, when checked.
    pub mode_discrepancy: Option<f64>,
    pub converged: bool,
    /// Time spent in the coupled sweep.
    pub coupled_wall_time: Duration,
}

impl ConvergenceTrace {
    pub fn last_increment(&self) -> f64 {
        self.entries.last().map_or(f64::NAN, |e| e.sup_increment)
    }

    /// Smallest `min_increment` over levels >= 1.
    pub fn min_increment(&self) -> f64 {
        self.entries
            .iter()
            .skip(1)
            .fold(f64::INFINITY, |a, e| a.min(e.min_increment))
    }

    pub fn to_text(&self, problem_hash: &str) -> String {
        let mut s = String::from("# switchopt convergence trace v1\n");
        let _ = writeln!(s, "# problem_hash={problem_hash}");
        let _ = writeln!(s, "# scale={:?}", self.scale);
        let _ = writeln!(s, "# max_sweeps={}", self.max_sweeps);
        let disc = self.mode_discrepancy.map_or("none".into(), |d| format!("{d:?}"));
        let _ = writeln!(s, "# mode_discrepancy={disc}");
        let _ = writeln!(s, "# converged={}", self.converged);
        s += "level,sup_increment,min_increment,sweeps,wall_ms\n";
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{},{:?},{:?},{},{:.3}",
                e.level,
                e.sup_increment,
                e.min_increment,
                e.sweeps,
                e.wall_time.as_secs_f64() * 1e3
            );
        }
        s
    }

    /// Parses the text written by [`Self::to_text`]; returns the problem hash too.
    pub fn from_text(text: &str) -> Option<(String, ConvergenceTrace)> {
        let mut trace = ConvergenceTrace::default();
        let mut hash = None;
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# ") {
                let Some((k, v)) = rest.split_once('=') else { continue };
                match k {
                    "problem_hash" => hash = Some(v.to_string()),
                    "scale" => trace.scale = v.parse().ok()?,
                    "max_sweeps" => trace.max_sweeps = v.parse().ok()?,
                    "mode_discrepancy" => trace.mode_discrepancy = v.parse().ok(),
                    "converged" => trace.converged = v.parse().ok()?,
                    _ => {}
                }
                continue;
            }
            if line.starts_with("level,") || line.trim().is_empty() {
                continue;
            }
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != 5 {
                return None;
            }
            trace.entries.push(TraceEntry {
                level: c[0].parse().ok()?,
                sup_increment: c[1].parse().ok()?,
                min_increment: c[2].parse().ok()?,
                sweeps: c[3].parse().ok()?,
                wall_time: Duration::from_secs_f64(c[4].parse::<f64>().ok()? / 1e3),
            });
        }
        Some((hash?, trace))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    /// Convergence tolerance on values normalized by `1 + |psi|_inf T`.
    pub tol: f64,
    /// Level budget for the n-switch cross-check.
    pub max_outer: usize,
    /// Run the n-switch iteration and compare.
    pub verify: bool,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            tol: 1e-8,
            max_outer: 50,
            verify: false,
        }
    }
}

struct Context<'a> {
    chain: &'a MarkovChainApprox,
    tables: ProblemTables,
    modes: usize,
    hash: String,
}

impl<'a> Context<'a> {
    fn new(chain: &'a MarkovChainApprox, p: &SwitchingProblem) -> Result<Context<'a>, LatticeError> {
        if chain.problem_hash() != p.hash() {
            return Err(LatticeError::ProblemMismatch {
                chain: chain.problem_hash().to_string(),
                problem: p.hash().to_string(),
            });
        }
        let tables = ProblemTables::sample(p, chain.grid(), chain.times())?;
        Ok(Context {
            chain,
            tables,
            modes: p.mode_count(),
            hash: p.hash().to_string(),
        })
    }

    fn empty(&self, scheme: Scheme) -> ValueField {
        ValueField::zeros(
            self.modes,
            self.chain.times().clone(),
            self.chain.grid().clone(),
            self.hash.clone(),
            scheme,
        )
    }

    fn scale(&self) -> f64 {
        1.0 + self.tables.psi_sup() * self.chain.times().horizon()
    }

    /// `V[i][n] = psi_i(t_n) dt + E[V[i][n+1]]` for every mode.
    fn continuation(&self, v: &mut ValueField, n: usize, buf: &mut [f64]) {
        let dt = self.chain.times().dt(n);
        for i in 0..self.modes {
            self.chain.expect(n, v.slice(i, n + 1), buf);
            let out = v.slice_mut(i, n);
            for (node, o) in out.iter_mut().enumerate() {
                *o = self.tables.psi(n, node, i) * dt + buf[node];
            }
        }
    }

    fn zero_switch(&self) -> ValueField {
        let mut v = self.empty(Scheme::Level(0));
        let mut buf = vec![0.0; self.chain.grid().node_count()];
        for n in (0..self.chain.steps()).rev() {
            self.continuation(&mut v, n, &mut buf);
        }
        v
    }

    /// One level of the n-switch recursion using `prev` as the obstacle source.
    fn next_level(&self, prev: &ValueField, level: usize) -> ValueField {
        let m = self.modes;
        let nodes = self.chain.grid().node_count();
        let mut v = self.empty(Scheme::Level(level));
        let mut buf = vec![0.0; nodes];
        for n in (0..self.chain.steps()).rev() {
            self.continuation(&mut v, n, &mut buf);
            for node in 0..nodes {
                let g = self.tables.cost_matrix(n, node);
                for i in 0..m {
                    let mut best = f64::NEG_INFINITY;
                    for j in (0..m).filter(|&j| j != i) {
                        best = best.max(-g[i * m + j] + prev.get(j, n, node));
                    }
                    if best > v.get(i, n, node) {
                        v.set(i, n, node, best);
                    }
                }
            }
        }
        v
    }

    /// Direct coupled backward sweep; returns the largest pass count used.
    fn coupled(&self) -> Result<(ValueField, usize), LatticeError> {
        let m = self.modes;
        let nodes = self.chain.grid().node_count();
        let mut v = self.empty(Scheme::FixedPoint);
        let mut buf = vec![0.0; nodes];
        let mut vals = vec![0.0; m];
        let mut max_sweeps = 0;
        for n in (0..self.chain.steps()).rev() {
            self.continuation(&mut v, n, &mut buf);
            if m < 2 {
                continue;
            }
            for node in 0..nodes {
                let g = self.tables.cost_matrix(n, node);
                for (i, x) in vals.iter_mut().enumerate() {
                    *x = v.get(i, n, node);
                }
                let mut changing = 0;
                loop {
                    let mut changed = false;
                    for i in 0..m {
                        for j in (0..m).filter(|&j| j != i) {
                            let cand = -g[i * m + j] + vals[j];
                            if cand > vals[i] {
                                vals[i] = cand;
                                changed = true;
                            }
                        }
                    }
                    if !changed {
                        break;
                    }
                    changing += 1;
                    if changing > m - 1 {
                        return Err(LatticeError::SwitchingLoop {
                            time_index: n,
                            node,
                            sweeps: changing,
                        });
                    }
                }
                max_sweeps = max_sweeps.max(changing);
                for (i, x) in vals.iter().enumerate() {
                    v.set(i, n, node, *x);
                }
            }
        }
        Ok((v, max_sweeps))
    }
}

/// Expected integrated profit in each mode with switching disabled.
pub fn solve_zero_switch(chain: &MarkovChainApprox, p: &SwitchingProblem) -> Result<ValueField, LatticeError> {
    Ok(Context::new(chain, p)?.zero_switch())
}

/// Values allowing at most `0, 1, ..., n_max` switches (one field per level).
///
/// Level `l` takes, at each node before the horizon, the larger of continuing
/// (`psi_i dt + E[V^l_i]`) and switching into the best other mode of level
/// `l - 1` net of its cost. No switch is allowed at the horizon itself.
pub fn solve_n_switch(
    chain: &MarkovChainApprox,
    p: &SwitchingProblem,
    n_max: usize,
) -> Result<(Vec<ValueField>, ConvergenceTrace), LatticeError> {
    let ctx = Context::new(chain, p)?;
    let start = Instant::now();
    let mut levels = vec![ctx.zero_switch()];
    let mut trace = ConvergenceTrace {
        scale: ctx.scale(),
        ..Default::default()
    };
    trace.entries.push(TraceEntry {
        level: 0,
        sup_increment: 0.0,
        min_increment: 0.0,
        sweeps: 0,
        wall_time: start.elapsed(),
    });
    for level in 1..=n_max {
        let t0 = Instant::now();
        let next = ctx.next_level(levels.last().unwrap(), level);
        let prev = levels.last().unwrap();
        trace.entries.push(TraceEntry {
            level,
            sup_increment: next.sup_distance(prev),
            min_increment: next.min_increment_over(prev),
            sweeps: 1,
            wall_time: t0.elapsed(),
        });
        levels.push(next);
    }
    Ok((levels, trace))
}

/// Iterates levels until the normalized sup increment drops below `tol`.
fn iterate_levels(ctx: &Context<'_>, tol: f64, max_outer: usize) -> (ValueField, ConvergenceTrace) {
    let scale = ctx.scale();
    let mut trace = ConvergenceTrace {
        scale,
        ..Default::default()
    };
    let t0 = Instant::now();
    let mut current = ctx.zero_switch();
    trace.entries.push(TraceEntry {
        level: 0,
        sup_increment: 0.0,
        min_increment: 0.0,
        sweeps: 0,
        wall_time: t0.elapsed(),
    });
    for level in 1..=max_outer {
        let t0 = Instant::now();
        let next = ctx.next_level(&current, level);
        let inc = next.sup_distance(&current);
        trace.entries.push(TraceEntry {
            level,
            sup_increment: inc,
            min_increment: next.min_increment_over(&current),
            sweeps: 1,
            wall_time: t0.elapsed(),
        });
        current = next;
        if inc / scale < tol {
            trace.converged = true;
            break;
        }
    }
    (current, trace)
}

/// Unconstrained values by the coupled backward sweep.
///
/// At each slice the continuation values are computed first, then every mode
/// is raised to its switching obstacle `max_j (-g_ij + V_j)` repeatedly, in
/// increasing mode order, until nothing changes. More than `m - 1`
/// value-changing passes means a profitable switching cycle exists and is
/// reported as [`LatticeError::SwitchingLoop`]. With `verify` set, the
/// n-switch iteration is also run and both results must agree within `tol`.
pub fn solve_fixed_point(
    chain: &MarkovChainApprox,
    p: &SwitchingProblem,
    opts: FixedPointOptions,
) -> Result<(ValueField, ConvergenceTrace), LatticeError> {
    if !(opts.tol > 0.0) {
        return Err(LatticeError::Tolerance);
    }
    let ctx = Context::new(chain, p)?;
    let t0 = Instant::now();
    let (field, max_sweeps) = ctx.coupled()?;
    let elapsed = t0.elapsed();
    let mut trace = if opts.verify {
        let (limit, mut trace) = iterate_levels(&ctx, opts.tol, opts.max_outer);
        if !trace.converged {
            trace.max_sweeps = max_sweeps;
            return Err(LatticeError::NotConverged { trace });
        }
        let discrepancy = field.sup_distance(&limit);
        trace.mode_discrepancy = Some(discrepancy);
        if discrepancy / trace.scale >= opts.tol {
            return Err(LatticeError::ModeDisagreement {
                discrepancy,
                tol: opts.tol * trace.scale,
            });
        }
        trace
    } else {
        ConvergenceTrace {
            scale: ctx.scale(),
            converged: true,
            ..Default::default()
        }
    };
    trace.max_sweeps = max_sweeps;
    trace.coupled_wall_time = elapsed;
    Ok((field, trace))
}
