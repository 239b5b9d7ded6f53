//! Consolidated summary of one or more run directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use switchopt_core::lattice::ConvergenceTrace;
use switchopt_core::problem::ProblemTables;
use switchopt_core::sim::extract_policy;
use switchopt_core::{Decision, SwitchingProblem, ValueField};
use thiserror::Error;

use crate::artifacts::{self as art, key_values, recorded_hash};
use crate::config::RunConfig;

pub const CRITERIA: [&str; 10] = ["A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "A9", "A10"];

/// Paths required for the Monte Carlo criteria.
const MIN_PATHS: usize = 100_000;
const MIN_STRATEGIES: usize = 100;

/// `A1`..`A10`, plus the qualified forms `A8:reject`, `A8:accept` and `A10:corrupt`.
pub fn is_criterion(name: &str) -> bool {
    match name.split_once(':') {
        None => CRITERIA.contains(&name),
        Some(("A8", "reject" | "accept")) | Some(("A10", "corrupt")) => true,
        _ => false,
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no run found in {dir}; expected {} and the artifacts of validate/solve/simulate ({})", art::CONFIG, .expected.join(", "))]
    NoRuns { dir: PathBuf, expected: Vec<String> },
    #[error("{path}: {message}")]
    Run { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunSummary {
    pub name: String,
    pub problem_hash: String,
    pub declared: Vec<String>,
    pub artifacts: Vec<String>,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CriterionStatus {
    pub criterion: String,
    /// `pass`, `fail` or `not-run`.
    pub status: String,
    pub runs: Vec<String>,
    pub detail: Vec<String>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Summary {
    pub directory: String,
    pub runs: Vec<RunSummary>,
    pub hash_consistent: bool,
    pub hash_mismatches: Vec<String>,
    pub criteria: Vec<CriterionStatus>,
    pub all_passed: bool,
}

impl Summary {
    pub fn status(&self, criterion: &str) -> Option<&str> {
        self.criteria
            .iter()
            .find(|c| c.criterion == criterion)
            .map(|c| c.status.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Outcome {
    Pass(String),
    Fail(String),
    NotRun(String),
}

struct Run {
    dir: PathBuf,
    name: String,
    config: RunConfig,
    problem: SwitchingProblem,
    artifacts: Vec<String>,
    missing: std::cell::RefCell<Vec<String>>,
}

impl Run {
    fn load(dir: &Path, name: String) -> Result<Run, ReportError> {
        let path = dir.join(art::CONFIG);
        let text = fs::read_to_string(&path).map_err(|source| ReportError::Io {
            path: path.clone(),
            source,
        })?;
        let config = RunConfig::parse(&text).map_err(|e| ReportError::Run {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let problem = config.problem.compile().map_err(|e| ReportError::Run {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let mut artifacts: Vec<String> = fs::read_dir(dir)
            .map_err(|source| ReportError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n != art::SUMMARY)
            .collect();
        artifacts.sort();
        Ok(Run {
            dir: dir.to_path_buf(),
            name,
            config,
            problem,
            artifacts,
            missing: Default::default(),
        })
    }

    fn read(&self, name: &str) -> Option<String> {
        let text = fs::read_to_string(self.dir.join(name)).ok();
        if text.is_none() {
            let mut missing = self.missing.borrow_mut();
            if !missing.iter().any(|m| m == name) {
                missing.push(name.to_string());
            }
        }
        text
    }

    fn engines(&self) -> Vec<&'static str> {
        let e = self.config.solver.engine;
        let mut v = Vec::new();
        if e.lattice() {
            v.push("lattice");
        }
        if e.pde() {
            v.push("pde");
        }
        v
    }

    fn field(&self, engine: &str) -> Result<ValueField, Outcome> {
        let name = art::value_file(engine);
        let text = self.read(&name).ok_or_else(|| Outcome::NotRun(format!("missing {name}")))?;
        ValueField::from_text(&text).map_err(|e| Outcome::Fail(format!("{name}: {e}")))
    }

    fn kv(&self, name: &str) -> Result<std::collections::BTreeMap<String, String>, Outcome> {
        self.read(name)
            .map(|t| key_values(&t))
            .ok_or_else(|| Outcome::NotRun(format!("missing {name}")))
    }

    fn hash_mismatches(&self) -> Vec<String> {
        let want = self.problem.hash();
        let mut out = Vec::new();
        for name in &self.artifacts {
            let Ok(text) = fs::read_to_string(self.dir.join(name)) else { continue };
            match recorded_hash(&text) {
                Some(h) if h == want => {}
                Some(h) => out.push(format!("{}/{name}: problem_hash={h}, configuration has {want}", self.name)),
                None => out.push(format!("{}/{name}: no problem_hash recorded", self.name)),
            }
        }
        out
    }
}

fn num(kv: &std::collections::BTreeMap<String, String>, key: &str) -> Result<f64, Outcome> {
    kv.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Outcome::Fail(format!("`{key}` missing or malformed")))
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn flatten(r: Result<Outcome, Outcome>) -> Outcome {
    r.unwrap_or_else(|o| o)
}

fn monotone_levels(run: &Run) -> Result<Outcome, Outcome> {
    let text = run
        .read(art::TRACE_LATTICE)
        .ok_or_else(|| Outcome::NotRun(format!("missing {}", art::TRACE_LATTICE)))?;
    let (_, trace) = ConvergenceTrace::from_text(&text).ok_or_else(|| Outcome::Fail("malformed trace".into()))?;
    if trace.entries.is_empty() {
        return Ok(Outcome::Fail("trace has no n-switch levels".into()));
    }
    let levels = trace.entries.len() - 1;
    let min_inc = trace.min_increment();
    let last = trace.last_increment();
    Ok(verdict(
        trace.converged && levels <= 50 && min_inc >= -1e-12 && last < 1e-8,
        format!("levels={levels} min_increment={min_inc:.3e} last_sup_increment={last:.3e}"),
    ))
}

fn obstacle(run: &Run) -> Result<Outcome, Outcome> {
    let mut detail = Vec::new();
    let mut ok = true;
    for engine in run.engines() {
        let v = run.field(engine)?;
        let tables = ProblemTables::sample(&run.problem, v.grid(), v.times())
            .map_err(|e| Outcome::Fail(e.to_string()))?;
        let excess = v.obstacle_excess(&tables);
        let tol = if engine == "pde" { 1e-8 } else { 1e-9 };
        ok &= excess <= tol && v.terminal_is_zero();
        detail.push(format!("{engine}: excess={excess:.3e} terminal_zero={}", v.terminal_is_zero()));
    }
    Ok(verdict(ok, detail.join("; ")))
}

fn cross_engine(run: &Run) -> Result<Outcome, Outcome> {
    let kv = run.kv(art::DISCREPANCY)?;
    let base = num(&kv, "at_x0.rel")?;
    if !kv.contains_key("refined.at_x0.rel") {
        return Ok(Outcome::NotRun(format!(
            "base rel={base:.3e}; refined comparison missing (set refine_check = true)"
        )));
    }
    let fine = num(&kv, "refined.at_x0.rel")?;
    Ok(verdict(
        base <= 0.01 && fine <= 0.005,
        format!("rel at x0: base={base:.4e} (<= 1e-2), refined={fine:.4e} (<= 5e-3)"),
    ))
}

fn policy_optimality(run: &Run) -> Result<Outcome, Outcome> {
    let kv = run.kv(art::STATS)?;
    let mean = num(&kv, "mean")?;
    let se = num(&kv, "std_error")?;
    let v = num(&kv, "reference_value")?;
    let paths = num(&kv, "paths")? as usize;
    Ok(verdict(
        (mean - v).abs() <= 3.0 * se && paths >= MIN_PATHS,
        format!("mean={mean:.6} value={v:.6} se={se:.3e} deviation={:.2} SE paths={paths}", (mean - v).abs() / se),
    ))
}

fn dominance(run: &Run) -> Result<Outcome, Outcome> {
    let kv = run.kv(art::DOMINANCE)?;
    let k = num(&kv, "strategies")? as usize;
    let within = num(&kv, "within_bound")? as usize;
    Ok(verdict(
        k >= MIN_STRATEGIES && within == k,
        format!("{within} of {k} strategies within value + 3 SE"),
    ))
}

fn closed_form(run: &Run) -> Result<Outcome, Outcome> {
    let p = &run.problem;
    let m = p.mode_count();
    let t = p.horizon();
    let psi: Option<Vec<f64>> = (0..m).map(|i| p.profit_expr(i).as_constant()).collect();
    let g: Option<Vec<f64>> = (0..m)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| p.cost_expr(i, j).as_constant())
        .collect();
    let (Some(psi), Some(g)) = (psi, g) else {
        return Ok(Outcome::Fail("profits and costs are not all constant".into()));
    };
    // With constant data any switch is best made at time zero.
    let mut w: Vec<f64> = psi.iter().map(|c| c * t).collect();
    for _ in 0..m {
        for i in 0..m {
            for j in (0..m).filter(|&j| j != i) {
                w[i] = w[i].max(-g[i * m + j] + w[j]);
            }
        }
    }
    let mut worst = 0.0f64;
    for engine in run.engines() {
        let v = run.field(engine)?;
        for (i, wi) in w.iter().enumerate() {
            for x in v.slice(i, 0) {
                worst = worst.max((x - wi).abs());
            }
        }
    }
    Ok(verdict(worst <= 1e-8, format!("max |v(0,x) - oracle| = {worst:.3e}")))
}

fn symmetry(run: &Run) -> Result<Outcome, Outcome> {
    if run.problem.mode_count() < 2 {
        return Ok(Outcome::Fail("needs at least two modes".into()));
    }
    let mut ok = true;
    let mut detail = Vec::new();
    for engine in run.engines() {
        let v = run.field(engine)?;
        let mut worst = 0.0f64;
        for n in 0..=v.steps() {
            for (a, b) in v.slice(0, n).iter().zip(v.slice(1, n)) {
                worst = worst.max((a - b).abs());
            }
        }
        let tol = if engine == "pde" { 1e-8 } else { 1e-12 };
        ok &= worst <= tol;
        detail.push(format!("{engine}: max |v1 - v2| = {worst:.3e}"));
    }
    Ok(verdict(ok, detail.join("; ")))
}

fn enforcement(run: &Run, expect_pass: bool) -> Result<Outcome, Outcome> {
    let kv = run.kv(art::VALIDATION)?;
    let overall = kv.get("overall").map(String::as_str).unwrap_or("?");
    let want = if expect_pass { "pass" } else { "fail" };
    Ok(verdict(overall == want, format!("validator {overall}, expected {want}")))
}

fn negative_cost(run: &Run) -> Result<Outcome, Outcome> {
    let p = &run.problem;
    if p.mode_count() != 2 {
        return Ok(Outcome::Fail("needs exactly two modes".into()));
    }
    let engines = run.engines();
    let v = run.field(engines[0])?;
    let policy = extract_policy(&v, p, run.config.solver.switch_tol).map_err(|e| Outcome::Fail(e.to_string()))?;
    let nodes = v.grid().node_count();
    let at_start = (0..nodes).all(|node| policy.decision(0, node, 0) == Decision::SwitchTo(1));
    // Once in mode 2 a path must stay there.
    let never_back = (0..=v.steps()).all(|n| (0..nodes).all(|node| policy.decision(n, node, 1) == Decision::Continue));
    let mut detail = format!("switch 1->2 at t=0 everywhere: {at_start}; mode 2 never switches: {never_back}");
    let mut ok = at_start && never_back;
    if engines.len() == 2 {
        let w = run.field(engines[1])?;
        let mut worst = 0.0f64;
        for i in 0..2 {
            for (a, b) in v.slice(i, 0).iter().zip(w.slice(i, 0)) {
                worst = worst.max((a - b).abs());
            }
        }
        ok &= worst <= 1e-8;
        let _ = write!(detail, "; engines agree at t=0 to {worst:.3e}");
    }
    Ok(verdict(ok, detail))
}

fn guard(run: &Run, corrupt: bool) -> Result<Outcome, Outcome> {
    let kv = run.kv(art::STATS)?;
    let hits = num(&kv, "guard_hits")? as usize;
    let paths = num(&kv, "paths")? as usize;
    if corrupt {
        let solve = run.kv(art::SOLVE)?;
        let forced = solve.get("forced").map(String::as_str) == Some("true");
        return Ok(verdict(forced && hits > 0, format!("forced={forced} guard_hits={hits} of {paths}")));
    }
    Ok(verdict(
        hits == 0 && paths >= MIN_PATHS,
        format!("guard_hits={hits} of {paths} paths"),
    ))
}

fn evaluate(run: &Run, declared: &str) -> Outcome {
    let r = match declared {
        "A1" => monotone_levels(run),
        "A2" => obstacle(run),
        "A3" => cross_engine(run),
        "A4" => policy_optimality(run),
        "A5" => dominance(run),
        "A6" => closed_form(run),
        "A7" => symmetry(run),
        "A8" | "A8:accept" => enforcement(run, true),
        "A8:reject" => enforcement(run, false),
        "A9" => negative_cost(run),
        "A10" => guard(run, false),
        "A10:corrupt" => guard(run, true),
        other => Ok(Outcome::Fail(format!("unknown criterion {other}"))),
    };
    flatten(r)
}

fn find_runs(dir: &Path) -> Result<Vec<Run>, ReportError> {
    let mut runs = Vec::new();
    if dir.join(art::CONFIG).is_file() {
        runs.push(Run::load(dir, ".".into())?);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|source| ReportError::Io {
            path: dir.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join(art::CONFIG).is_file())
        .collect();
    subdirs.sort();
    for sub in subdirs {
        let name = sub.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        runs.push(Run::load(&sub, name)?);
    }
    if runs.is_empty() {
        let expected = [
            art::VALIDATION,
            art::SOLVE,
            "value_lattice.csv",
            "value_pde.csv",
            art::TRACE_LATTICE,
            art::HOWARD_PDE,
            art::DISCREPANCY,
            art::STATS,
            art::DOMINANCE,
        ];
        return Err(ReportError::NoRuns {
            dir: dir.to_path_buf(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        });
    }
    Ok(runs)
}

/// Reads every run under `dir` (the directory itself and its immediate
/// subdirectories holding a `config.ini`) and evaluates the criteria each run
/// declares.
pub fn build_summary(dir: &Path) -> Result<Summary, ReportError> {
    let runs = find_runs(dir)?;
    let mut hash_mismatches = Vec::new();
    for run in &runs {
        hash_mismatches.extend(run.hash_mismatches());
    }

    let mut criteria = Vec::new();
    for base in CRITERIA {
        let mut outcomes = Vec::new();
        for run in &runs {
            for declared in &run.config.output.criteria {
                if declared.split(':').next() == Some(base) {
                    outcomes.push((run.name.clone(), declared.clone(), evaluate(run, declared)));
                }
            }
        }
        let status = if outcomes.is_empty() {
            "not-run"
        } else if outcomes.iter().any(|(_, _, o)| matches!(o, Outcome::Fail(_))) {
            "fail"
        } else if outcomes.iter().any(|(_, _, o)| matches!(o, Outcome::NotRun(_))) {
            "not-run"
        } else {
            "pass"
        };
        let detail = if outcomes.is_empty() {
            vec!["no run declares this criterion".to_string()]
        } else {
            outcomes
                .iter()
                .map(|(name, declared, o)| {
                    let (tag, text) = match o {
                        Outcome::Pass(t) => ("pass", t),
                        Outcome::Fail(t) => ("fail", t),
                        Outcome::NotRun(t) => ("not-run", t),
                    };
                    format!("{name} [{declared}] {tag}: {text}")
                })
                .collect()
        };
        let mut names: Vec<String> = outcomes.into_iter().map(|(n, _, _)| n).collect();
        names.dedup();
        criteria.push(CriterionStatus {
            criterion: base.to_string(),
            status: status.to_string(),
            runs: names,
            detail,
        });
    }

    let hash_consistent = hash_mismatches.is_empty();
    let all_passed = hash_consistent && criteria.iter().all(|c| c.status == "pass");
    Ok(Summary {
        directory: dir.display().to_string(),
        runs: runs
            .iter()
            .map(|r| RunSummary {
                name: r.name.clone(),
                problem_hash: r.problem.hash().to_string(),
                declared: r.config.output.criteria.clone(),
                artifacts: r.artifacts.clone(),
                missing: r.missing.borrow().clone(),
            })
            .collect(),
        hash_consistent,
        hash_mismatches,
        criteria,
        all_passed,
    })
}
