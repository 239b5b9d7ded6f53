use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use super::policy::{Decision, SwitchingPolicy};
use super::strategy::{Strategy, StrategyState};
use crate::exprlang::EvalError;
use crate::grid::TimeGrid;
use crate::problem::SwitchingProblem;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("path count must be at least 1")]
    NoPaths,
    #[error("substeps must be at least 1")]
    NoSubsteps,
    #[error("policy was extracted for problem {policy}, not {problem}")]
    ProblemMismatch { policy: String, problem: String },
    #[error("policy grid is incompatible with the problem: {0}")]
    Incompatible(String),
    #[error("strategy refers to {needed} modes/axes but the problem has {available}")]
    Strategy { needed: usize, available: usize },
    #[error("coefficient evaluation failed on a path: {0}")]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    pub paths: usize,
    pub seed: u64,
    /// Euler steps per decision interval.
    pub substeps: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            paths: 10_000,
            seed: 0,
            substeps: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchEvent {
    pub time: f64,
    pub from: usize,
    pub to: usize,
    pub cost: f64,
}

/// Everything that happened on one simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    /// State at every decision time (and the horizon, unless aborted).
    pub states: Vec<Vec<f64>>,
    pub switches: Vec<SwitchEvent>,
    /// `int psi_u(s, X_s) ds`, left-point rule.
    pub profit: f64,
    pub cost: f64,
    /// `profit - cost`.
    pub j: f64,
    /// Set when an instantaneous chain exceeded `m - 1` switches.
    pub aborted: bool,
}

impl PathRecord {
    pub fn negative_cost_switches(&self) -> usize {
        self.switches.iter().filter(|s| s.cost < 0.0).count()
    }
}

/// Monte Carlo summary of a strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyStats {
    pub label: String,
    pub problem_hash: String,
    pub seed: u64,
    pub substeps: usize,
    /// Paths simulated.
    pub paths: usize,
    /// Paths contributing to the mean (not aborted).
    pub used: usize,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(used)`.
    pub std_error: f64,
    /// `switch_histogram[k]` paths made exactly `k` switches.
    pub switch_histogram: Vec<usize>,
    /// `negative_cost_histogram[k]` paths made `k` switches with negative cost.
    pub negative_cost_histogram: Vec<usize>,
    /// Paths aborted by the instantaneous-chain guard.
    pub guard_hits: usize,
    /// Per path `(switches, J)`; `J` is NaN for aborted paths.
    pub per_path: Vec<(usize, f64)>,
}

impl StrategyStats {
    pub fn assumption_suspect(&self) -> bool {
        self.guard_hits > 0
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "label={}", self.label);
        let _ = writeln!(s, "problem_hash={}", self.problem_hash);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "substeps={}", self.substeps);
        let _ = writeln!(s, "paths={}", self.paths);
        let _ = writeln!(s, "used={}", self.used);
        let _ = writeln!(s, "mean={:?}", self.mean);
        let _ = writeln!(s, "std_error={:?}", self.std_error);
        let _ = writeln!(s, "guard_hits={}", self.guard_hits);
        let _ = writeln!(s, "assumption_suspect={}", self.assumption_suspect());
        let hist = |h: &[usize]| h.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "switch_histogram={}", hist(&self.switch_histogram));
        let _ = writeln!(s, "negative_cost_histogram={}", hist(&self.negative_cost_histogram));
        s
    }

    /// Parses [`Self::to_text`]; `per_path` is left empty.
    pub fn from_text(text: &str) -> Option<StrategyStats> {
        let mut st = StrategyStats {
            label: String::new(),
            problem_hash: String::new(),
            seed: 0,
            substeps: 1,
            paths: 0,
            used: 0,
            mean: f64::NAN,
            std_error: f64::NAN,
            switch_histogram: Vec::new(),
            negative_cost_histogram: Vec::new(),
            guard_hits: 0,
            per_path: Vec::new(),
        };
        let hist = |v: &str| -> Option<Vec<usize>> { v.split_whitespace().map(|c| c.parse().ok()).collect() };
        for line in text.lines() {
            let Some((k, v)) = line.split_once('=') else { continue };
            match k {
                "label" => st.label = v.to_string(),
                "problem_hash" => st.problem_hash = v.to_string(),
                "seed" => st.seed = v.parse().ok()?,
                "substeps" => st.substeps = v.parse().ok()?,
                "paths" => st.paths = v.parse().ok()?,
                "used" => st.used = v.parse().ok()?,
                "mean" => st.mean = v.parse().ok()?,
                "std_error" => st.std_error = v.parse().ok()?,
                "guard_hits" => st.guard_hits = v.parse().ok()?,
                "switch_histogram" => st.switch_histogram = hist(v)?,
                "negative_cost_histogram" => st.negative_cost_histogram = hist(v)?,
                _ => {}
            }
        }
        Some(st)
    }

    pub fn paths_csv(&self) -> String {
        let mut s = String::from("path,switches,J\n");
        for (k, (sw, j)) in self.per_path.iter().enumerate() {
            let _ = writeln!(s, "{k},{sw},{j:?}");
        }
        s
    }
}

/// Deterministic pairwise summation (fixed split points).
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Mean and standard error, shifted by the first sample for stability.
pub fn mean_and_std_error(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let shift = v[0];
    let d: Vec<f64> = v.iter().map(|x| x - shift).collect();
    let sum = pairwise_sum(&d);
    let mean = shift + sum / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = d.iter().map(|x| x * x).collect();
    let var = ((pairwise_sum(&sq) - sum * sum / n as f64) / (n - 1) as f64).max(0.0);
    (mean, (var / n as f64).sqrt())
}

/// The RNG of path `k`: one ChaCha stream per path index.
pub fn path_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

/// Simulates one path, asking `decide(n, t, x, mode)` for actions at every
/// decision time before the horizon.
pub fn simulate_path<F>(
    p: &SwitchingProblem,
    times: &TimeGrid,
    substeps: usize,
    rng: &mut ChaCha8Rng,
    record_states: bool,
    mut decide: F,
) -> Result<PathRecord, EvalError>
where
    F: FnMut(usize, f64, &[f64], usize) -> Decision,
{
    let m = p.mode_count();
    let d = p.state_dim();
    let k = p.brownian_dim();
    let mut x = p.x0().to_vec();
    let mut mode = p.initial_mode();
    let mut rec = PathRecord {
        states: Vec::new(),
        switches: Vec::new(),
        profit: 0.0,
        cost: 0.0,
        j: 0.0,
        aborted: false,
    };
    let mut z = vec![0.0; k];
    for n in 0..times.steps() {
        let t = times.times()[n];
        if record_states {
            rec.states.push(x.clone());
        }
        let mut chain = 0;
        while let Decision::SwitchTo(to) = decide(n, t, &x, mode) {
            if to == mode || to >= m {
                break;
            }
            if chain == m - 1 {
                rec.aborted = true;
                rec.j = rec.profit - rec.cost;
                return Ok(rec);
            }
            chain += 1;
            let cost = p.switch_cost(mode, to, t, &x)?;
            rec.cost += cost;
            rec.switches.push(SwitchEvent {
                time: t,
                from: mode,
                to,
                cost,
            });
            mode = to;
        }
        let h = times.dt(n) / substeps as f64;
        let sq = h.sqrt();
        for s in 0..substeps {
            let ts = t + s as f64 * h;
            rec.profit += p.profit_rate(mode, ts, &x)? * h;
            let b = p.drift(ts, &x)?;
            let sig = p.vol(ts, &x)?;
            for zq in z.iter_mut() {
                *zq = StandardNormal.sample(rng);
            }
            for a in 0..d {
                let mut dx = b[a] * h;
                for q in 0..k {
                    dx += sig[a * k + q] * sq * z[q];
                }
                x[a] += dx;
            }
        }
    }
    if record_states {
        rec.states.push(x.clone());
    }
    rec.j = rec.profit - rec.cost;
    Ok(rec)
}

fn run<F>(
    p: &SwitchingProblem,
    opts: SimOptions,
    label: String,
    path: F,
) -> Result<StrategyStats, SimError>
where
    F: Fn(&mut ChaCha8Rng) -> Result<PathRecord, EvalError> + Sync,
{
    if opts.paths == 0 {
        return Err(SimError::NoPaths);
    }
    if opts.substeps == 0 {
        return Err(SimError::NoSubsteps);
    }
    let results: Vec<(usize, usize, f64, bool)> = (0..opts.paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_rng(opts.seed, k);
            let r = path(&mut rng)?;
            Ok((r.switches.len(), r.negative_cost_switches(), r.j, r.aborted))
        })
        .collect::<Result<_, EvalError>>()?;
    let mut used = Vec::with_capacity(results.len());
    let mut switch_histogram = Vec::new();
    let mut negative_cost_histogram = Vec::new();
    let mut guard_hits = 0;
    let mut per_path = Vec::with_capacity(results.len());
    let bump = |h: &mut Vec<usize>, k: usize| {
        if h.len() <= k {
            h.resize(k + 1, 0);
        }
        h[k] += 1;
    };
    for &(sw, neg, j, aborted) in &results {
        if aborted {
            guard_hits += 1;
            per_path.push((sw, f64::NAN));
            continue;
        }
        used.push(j);
        bump(&mut switch_histogram, sw);
        bump(&mut negative_cost_histogram, neg);
        per_path.push((sw, j));
    }
    let (mean, std_error) = mean_and_std_error(&used);
    Ok(StrategyStats {
        label,
        problem_hash: p.hash().to_string(),
        seed: opts.seed,
        substeps: opts.substeps,
        paths: opts.paths,
        used: used.len(),
        mean,
        std_error,
        switch_histogram,
        negative_cost_histogram,
        guard_hits,
        per_path,
    })
}

fn check_policy(p: &SwitchingProblem, policy: &SwitchingPolicy) -> Result<(), SimError> {
    if policy.problem_hash() != p.hash() {
        return Err(SimError::ProblemMismatch {
            policy: policy.problem_hash().to_string(),
            problem: p.hash().to_string(),
        });
    }
    if policy.modes() != p.mode_count() {
        return Err(SimError::Incompatible(format!(
            "{} modes in the policy, {} in the problem",
            policy.modes(),
            p.mode_count()
        )));
    }
    if policy.grid().dim() != p.state_dim() {
        return Err(SimError::Incompatible(format!(
            "grid dimension {} for state dimension {}",
            policy.grid().dim(),
            p.state_dim()
        )));
    }
    if (policy.times().horizon() - p.horizon()).abs() > 1e-12 * p.horizon().max(1.0) {
        return Err(SimError::Incompatible("horizon differs".into()));
    }
    Ok(())
}

/// Simulates a feedback policy from `x0` in the initial mode, with decisions
/// at the policy's grid times looked up at the nearest node.
pub fn simulate(p: &SwitchingProblem, policy: &SwitchingPolicy, opts: SimOptions) -> Result<StrategyStats, SimError> {
    check_policy(p, policy)?;
    let times = policy.times();
    let label = format!("policy:{}", policy.source());
    run(p, opts, label, |rng| {
        simulate_path(p, times, opts.substeps, rng, false, |n, _, x, i| policy.lookup(n, x, i))
    })
}

/// Single path of a policy with its full record (states included).
pub fn policy_path(p: &SwitchingProblem, policy: &SwitchingPolicy, seed: u64, index: usize, substeps: usize) -> Result<PathRecord, SimError> {
    check_policy(p, policy)?;
    let mut rng = path_rng(seed, index);
    Ok(simulate_path(p, policy.times(), substeps.max(1), &mut rng, true, |n, _, x, i| {
        policy.lookup(n, x, i)
    })?)
}

fn check_strategy(p: &SwitchingProblem, s: &Strategy) -> Result<(), SimError> {
    if s.modes_needed() > p.mode_count() {
        return Err(SimError::Strategy {
            needed: s.modes_needed(),
            available: p.mode_count(),
        });
    }
    if s.axes_needed() > p.state_dim() {
        return Err(SimError::Strategy {
            needed: s.axes_needed(),
            available: p.state_dim(),
        });
    }
    Ok(())
}

/// Simulates an explicit strategy with decisions at the times of `times`.
pub fn evaluate_fixed_strategy(
    p: &SwitchingProblem,
    strategy: &Strategy,
    times: &TimeGrid,
    opts: SimOptions,
) -> Result<StrategyStats, SimError> {
    check_strategy(p, strategy)?;
    run(p, opts, strategy.to_string(), |rng| {
        let mut state = StrategyState::default();
        simulate_path(p, times, opts.substeps, rng, false, |n, t, x, i| {
            strategy.decide(&mut state, n, t, x, i)
        })
    })
}

/// Single path of an explicit strategy with its full record.
pub fn strategy_path(
    p: &SwitchingProblem,
    strategy: &Strategy,
    times: &TimeGrid,
    seed: u64,
    index: usize,
    substeps: usize,
) -> Result<PathRecord, SimError> {
    check_strategy(p, strategy)?;
    let mut rng = path_rng(seed, index);
    let mut state = StrategyState::default();
    Ok(simulate_path(p, times, substeps.max(1), &mut rng, true, |n, t, x, i| {
        strategy.decide(&mut state, n, t, x, i)
    })?)
}
