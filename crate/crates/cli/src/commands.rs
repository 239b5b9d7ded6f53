use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use switchopt_core::lattice::{solve_fixed_point, FixedPointOptions, LatticeError};
use switchopt_core::pde::{assemble_with, solve_with, PdeError};
use switchopt_core::problem::{validate, ProblemTables};
use switchopt_core::sim::{evaluate_fixed_strategy, extract_policy, simulate, SimOptions, Strategy};
use switchopt_core::{MarkovChainApprox, SampleGrid, SpaceGrid, SwitchingProblem, TimeGrid, ValidationReport, ValueField};
use thiserror::Error;

use crate::artifacts as art;
use crate::config::{ConfigError, Engine, Format, RunConfig};

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    Failure = 1,
    Invalid = 2,
    NotConverged = 3,
    GuardTripped = 4,
}

impl Status {
    pub fn code(self) -> u8 {
        self as u8
    }

    fn worst(self, other: Status) -> Status {
        if other.code() > self.code() {
            other
        } else {
            self
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Config {
        path: PathBuf,
        #[source]
        source: ConfigError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Run(String),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

/// Command-line values that take precedence over the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub engine: Option<Engine>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub force: bool,
    pub strategy: Option<String>,
    pub field: Option<PathBuf>,
}

/// A configuration with overrides applied, its compiled problem, and the
/// output directory (created).
pub struct Job {
    pub config: RunConfig,
    pub problem: SwitchingProblem,
    pub out: PathBuf,
}

impl Job {
    pub fn load(path: &Path, o: &Overrides) -> Result<Job, CliError> {
        let text = fs::read_to_string(path).map_err(io(path))?;
        let mut config = RunConfig::parse(&text).map_err(|source| CliError::Config {
            path: path.to_path_buf(),
            source,
        })?;
        if let Some(e) = o.engine {
            config.solver.engine = e;
        }
        if let Some(n) = o.paths {
            if n == 0 {
                return Err(CliError::Run("--paths must be at least 1".into()));
            }
            config.simulate.paths = n;
        }
        if let Some(s) = o.seed {
            config.simulate.seed = s;
        }
        if let Some(t) = o.tol {
            if !(t > 0.0) {
                return Err(CliError::Run("--tol must be positive".into()));
            }
            config.solver.tol = t;
        }
        if let Some(d) = &o.out {
            config.output.directory = d.clone();
        }
        Job::new(config)
    }

    pub fn new(config: RunConfig) -> Result<Job, CliError> {
        let problem = config.problem.compile().map_err(run_err)?;
        let out = config.output.directory.clone();
        fs::create_dir_all(&out).map_err(io(&out))?;
        let job = Job { config, problem, out };
        let echo = format!("# problem_hash={}\n{}", job.problem.hash(), job.config.to_text());
        job.write(art::CONFIG, &echo)?;
        Ok(job)
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(io(&path))
    }

    fn csv(&self) -> bool {
        self.config.output.formats.contains(&Format::Csv)
    }

    fn space(&self) -> SpaceGrid {
        self.config.grid.space()
    }

    fn times(&self) -> TimeGrid {
        self.config.grid.times(self.problem.horizon())
    }
}

/// Runs the cost-structure checks on every grid point and writes the report.
pub fn validate_job(job: &Job) -> Result<ValidationReport, CliError> {
    let samples = SampleGrid::from_grid(&job.space(), &job.times());
    let report = validate(&job.problem, &samples).map_err(run_err)?;
    job.write(art::VALIDATION, &report.to_text())?;
    Ok(report)
}

fn describe_failures(report: &ValidationReport) -> String {
    let mut s = String::new();
    for c in report.checks.iter().filter(|c| !c.passed) {
        let _ = write!(s, "\n  {} failed", c.name);
        if let Some(m) = c.margin {
            let _ = write!(s, " (margin {m:.6e})");
        }
        if let Some(w) = &c.witness {
            let _ = write!(s, ": {}", w.describe());
        }
    }
    s
}

pub fn cmd_validate(config: &Path, o: &Overrides) -> Result<Status, CliError> {
    let job = Job::load(config, o)?;
    let report = validate_job(&job)?;
    if report.passed() {
        eprintln!("validation passed ({} samples)", report.sample_count);
        Ok(Status::Ok)
    } else {
        eprintln!("validation failed:{}", describe_failures(&report));
        Ok(Status::Invalid)
    }
}

/// Result of one engine run.
pub struct EngineRun {
    pub field: Option<ValueField>,
    pub status: Status,
    pub note: String,
    pub seconds: f64,
}

fn lattice_run(job: &Job, spec: &switchopt_core::GridSpec, write: bool) -> Result<EngineRun, CliError> {
    let p = &job.problem;
    let start = Instant::now();
    let chain = MarkovChainApprox::build(p, spec).map_err(run_err)?;
    let opts = FixedPointOptions {
        tol: job.config.solver.tol,
        max_outer: job.config.solver.max_outer,
        verify: write,
    };
    let (field, status, note) = match solve_fixed_point(&chain, p, opts) {
        Ok((field, trace)) => {
            if write {
                job.write(art::TRACE_LATTICE, &trace.to_text(p.hash()))?;
            }
            (Some(field), Status::Ok, "ok".to_string())
        }
        Err(e @ (LatticeError::NotConverged { .. } | LatticeError::ModeDisagreement { .. })) => {
            if let LatticeError::NotConverged { trace } = &e {
                job.write(art::TRACE_LATTICE, &trace.to_text(p.hash()))?;
            }
            // The coupled sweep alone still yields a field worth keeping.
            let unchecked = FixedPointOptions { verify: false, ..opts };
            let field = solve_fixed_point(&chain, p, unchecked).ok().map(|(f, _)| f);
            (field, Status::NotConverged, e.to_string())
        }
        Err(e @ LatticeError::SwitchingLoop { .. }) => (None, Status::NotConverged, e.to_string()),
        Err(e) => return Err(run_err(e)),
    };
    Ok(EngineRun {
        field,
        status,
        note,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn pde_run(job: &Job, grid: &SpaceGrid, times: &TimeGrid, write: bool) -> Result<EngineRun, CliError> {
    let p = &job.problem;
    let start = Instant::now();
    let generator = assemble_with(p, grid, times, job.config.solver.pde_drift).map_err(run_err)?;
    let tables = ProblemTables::sample(p, grid, times).map_err(run_err)?;
    let (field, status, note) = match solve_with(p, &generator, &tables, times) {
        Ok((field, log)) => {
            if write {
                job.write(art::HOWARD_PDE, &log.to_text(p.hash()))?;
            }
            (Some(field), Status::Ok, format!("ok ({} policy iterations)", log.total()))
        }
        Err(e @ (PdeError::NotConverged { .. } | PdeError::LinearBreakdown { .. })) => {
            (None, Status::NotConverged, e.to_string())
        }
        Err(e) => return Err(run_err(e)),
    };
    Ok(EngineRun {
        field,
        status,
        note,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Values of mode `i` as a CSV matrix: one row per time, one
/// column per node.
pub fn surface_csv(v: &ValueField, i: usize) -> String {
    let grid = v.grid();
    let mut s = String::new();
    let _ = writeln!(s, "# problem_hash={}", v.problem_hash());
    let _ = writeln!(s, "# mode={} scheme={} grid={}", i + 1, v.scheme(), grid);
    s += "t";
    for node in 0..grid.node_count() {
        if grid.dim() == 1 {
            let _ = write!(s, ",{:?}", grid.point(node)[0]);
        } else {
            let _ = write!(s, ",n{node}");
        }
    }
    s.push('\n');
    for (n, t) in v.times().times().iter().enumerate() {
        let _ = write!(s, "{t:?}");
        for x in v.slice(i, n) {
            let _ = write!(s, ",{x:?}");
        }
        s.push('\n');
    }
    s
}

fn emit_field(job: &Job, engine: &str, v: &ValueField) -> Result<(), CliError> {
    job.write(&art::value_file(engine), &v.to_text())?;
    if job.csv() {
        let policy = extract_policy(v, &job.problem, job.config.solver.switch_tol).map_err(run_err)?;
        for i in 0..v.modes() {
            job.write(&art::surface_file(engine, i), &surface_csv(v, i))?;
            job.write(&art::region_file(engine, i), &policy.region_csv(i))?;
        }
    }
    Ok(())
}

/// Differences between the lattice and PDE fields on the same grid.
fn discrepancy_lines(prefix: &str, lat: &ValueField, pde: &ValueField, p: &SwitchingProblem) -> String {
    let mut s = String::new();
    let x0 = p.x0();
    let i0 = p.initial_mode();
    let a = lat.value_at(i0, 0, x0);
    let b = pde.value_at(i0, 0, x0);
    let _ = writeln!(s, "{prefix}nodes={}", lat.grid().node_count());
    let _ = writeln!(s, "{prefix}steps={}", lat.steps());
    let _ = writeln!(s, "{prefix}sup_abs={:?}", lat.sup_distance(pde));
    let _ = writeln!(s, "{prefix}at_x0.lattice={a:?}");
    let _ = writeln!(s, "{prefix}at_x0.pde={b:?}");
    let _ = writeln!(s, "{prefix}at_x0.abs={:?}", (a - b).abs());
    let _ = writeln!(s, "{prefix}at_x0.rel={:?}", (a - b).abs() / a.abs().max(1e-300));
    for i in 0..p.mode_count() {
        let a = lat.value_at(i, 0, x0);
        let b = pde.value_at(i, 0, x0);
        let _ = writeln!(s, "{prefix}mode.{}.at_x0.abs={:?}", i + 1, (a - b).abs());
    }
    s
}

pub fn cmd_solve(config: &Path, o: &Overrides) -> Result<Status, CliError> {
    let job = Job::load(config, o)?;
    solve_job(&job, o.force)
}

pub fn solve_job(job: &Job, force: bool) -> Result<Status, CliError> {
    let report = validate_job(job)?;
    if !report.passed() {
        if !force {
            eprintln!("validation failed, not solving (use --force to override):{}", describe_failures(&report));
            return Ok(Status::Invalid);
        }
        eprintln!("WARNING: validation FAILED; solving anyway because of --force. Results may be meaningless:{}",
            describe_failures(&report));
    }
    let p = &job.problem;
    let engine = job.config.solver.engine;
    let mut meta = String::new();
    let _ = writeln!(meta, "problem_hash={}", p.hash());
    let _ = writeln!(meta, "validation={}", if report.passed() { "pass" } else { "fail" });
    let _ = writeln!(meta, "forced={}", force && !report.passed());
    let _ = writeln!(meta, "engine={engine}");

    let mut status = Status::Ok;
    let mut fields: Vec<(&str, Option<ValueField>)> = Vec::new();
    let spec = job.config.grid.spec();
    if engine.lattice() {
        let run = lattice_run(job, &spec, true)?;
        record(&mut meta, "lattice", &run, p);
        status = status.worst(run.status);
        if let Some(v) = &run.field {
            emit_field(job, "lattice", v)?;
        }
        fields.push(("lattice", run.field));
    }
    if engine.pde() {
        let run = pde_run(job, &job.space(), &job.times(), true)?;
        record(&mut meta, "pde", &run, p);
        status = status.worst(run.status);
        if let Some(v) = &run.field {
            emit_field(job, "pde", v)?;
        }
        fields.push(("pde", run.field));
    }
    if let [(_, Some(lat)), (_, Some(pde))] = &fields[..] {
        let mut d = String::new();
        let _ = writeln!(d, "problem_hash={}", p.hash());
        d += &discrepancy_lines("", lat, pde, p);
        if job.config.solver.refine_check {
            let fine = spec.refined();
            let lat = lattice_run(job, &fine, false)?;
            let pde = pde_run(job, &fine.space, &TimeGrid::uniform(p.horizon(), fine.steps), false)?;
            status = status.worst(lat.status).worst(pde.status);
            match (&lat.field, &pde.field) {
                (Some(a), Some(b)) => d += &discrepancy_lines("refined.", a, b, p),
                _ => {
                    let _ = writeln!(d, "refined.status=not-converged");
                }
            }
        }
        job.write(art::DISCREPANCY, &d)?;
    }
    job.write(art::SOLVE, &meta)?;
    eprint!("{meta}");
    Ok(status)
}

fn record(meta: &mut String, engine: &str, run: &EngineRun, p: &SwitchingProblem) {
    let _ = writeln!(meta, "{engine}.status={}", if run.status == Status::Ok { "ok" } else { "not-converged" });
    let _ = writeln!(meta, "{engine}.note={}", run.note);
    let _ = writeln!(meta, "{engine}.seconds={:.3}", run.seconds);
    if let Some(v) = &run.field {
        let _ = writeln!(meta, "{engine}.value_at_x0={:?}", v.value_at(p.initial_mode(), 0, p.x0()));
    }
}

pub fn cmd_simulate(config: &Path, o: &Overrides) -> Result<Status, CliError> {
    let job = Job::load(config, o)?;
    simulate_job(&job, o.field.as_deref(), o.strategy.as_deref())
}

pub fn simulate_job(job: &Job, field: Option<&Path>, strategy: Option<&str>) -> Result<Status, CliError> {
    let p = &job.problem;
    let engine = if job.config.solver.engine == Engine::Pde { "pde" } else { "lattice" };
    let path = field.map_or_else(|| job.out.join(art::value_file(engine)), Path::to_path_buf);
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    let v = ValueField::from_text(&text).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
    if v.problem_hash() != p.hash() {
        return Err(CliError::Run(format!(
            "hash mismatch: {} was solved for problem {}, the configuration describes {}",
            path.display(),
            v.problem_hash(),
            p.hash()
        )));
    }
    let sim = &job.config.simulate;
    let opts = SimOptions {
        paths: sim.paths,
        seed: sim.seed,
        substeps: sim.substeps,
    };
    let policy = extract_policy(&v, p, job.config.solver.switch_tol).map_err(run_err)?;
    let stats = simulate(p, &policy, opts).map_err(run_err)?;
    let reference = v.value_at(p.initial_mode(), 0, p.x0());
    let mut text = stats.to_text();
    let _ = writeln!(text, "reference_value={reference:?}");
    let deviation = (stats.mean - reference).abs() / stats.std_error;
    let _ = writeln!(text, "deviation_in_se={deviation:?}");
    let _ = writeln!(text, "within_3se={}", (stats.mean - reference).abs() <= 3.0 * stats.std_error);
    job.write(art::STATS, &text)?;
    job.write(art::PATHS, &format!("# problem_hash={}\n{}", p.hash(), stats.paths_csv()))?;
    eprintln!(
        "policy: mean J = {:.6} +- {:.6} (SE) over {} paths; value {:.6}",
        stats.mean, stats.std_error, stats.used, reference
    );

    if let Some(s) = strategy {
        let strategies = parse_strategies(s, job, sim.seed)?;
        let per_strategy = SimOptions {
            paths: sim.strategy_paths,
            ..opts
        };
        let d = dominance(job, &strategies, v.times(), reference, per_strategy)?;
        job.write(art::DOMINANCE, &d)?;
    }

    if stats.guard_hits > 0 {
        eprintln!(
            "GUARD TRIPPED: {} of {} paths requested a switch after {} instantaneous switches; \
             the cost structure likely admits a free loop",
            stats.guard_hits,
            stats.paths,
            p.mode_count() - 1
        );
        return Ok(Status::GuardTripped);
    }
    Ok(Status::Ok)
}

fn parse_strategies(s: &str, job: &Job, seed: u64) -> Result<Vec<Strategy>, CliError> {
    if let Some(k) = s.strip_prefix("random:") {
        let k: usize = k.parse().map_err(|_| CliError::Run(format!("bad strategy count in `{s}`")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let g = &job.config.grid;
        let m = job.problem.mode_count();
        Ok((0..k).map(|_| Strategy::random_threshold(&mut rng, m, &g.lo, &g.hi)).collect())
    } else {
        Ok(vec![s.parse().map_err(run_err)?])
    }
}

/// Evaluates explicit strategies with common random numbers and compares each
/// mean against `reference`.
pub fn dominance(job: &Job, strategies: &[Strategy], times: &TimeGrid, reference: f64, opts: SimOptions) -> Result<String, CliError> {
    let mut body = String::new();
    let mut within = 0;
    for (k, st) in strategies.iter().enumerate() {
        let stats = evaluate_fixed_strategy(&job.problem, st, times, opts).map_err(run_err)?;
        let margin = reference + 3.0 * stats.std_error - stats.mean;
        if margin >= 0.0 {
            within += 1;
        }
        let _ = writeln!(
            body,
            "strategy.{}={} mean={:?} std_error={:?} margin={:?}",
            k + 1,
            st,
            stats.mean,
            stats.std_error,
            margin
        );
    }
    let mut s = String::new();
    let _ = writeln!(s, "problem_hash={}", job.problem.hash());
    let _ = writeln!(s, "reference_value={reference:?}");
    let _ = writeln!(s, "paths={}", opts.paths);
    let _ = writeln!(s, "seed={}", opts.seed);
    let _ = writeln!(s, "strategies={}", strategies.len());
    let _ = writeln!(s, "within_bound={within}");
    let _ = writeln!(s, "all_within_bound={}", within == strategies.len());
    eprintln!("dominance: {within} of {} strategies within v + 3 SE", strategies.len());
    Ok(s + &body)
}

/// Writes `summary.json` for the runs under `dir`; fails when any declared
/// criterion fails or artifact hashes disagree.
pub fn cmd_report(dir: &Path) -> Result<Status, CliError> {
    let summary = crate::report::build_summary(dir).map_err(run_err)?;
    let json = serde_json::to_string_pretty(&summary).map_err(run_err)?;
    let path = dir.join(art::SUMMARY);
    fs::write(&path, json + "\n").map_err(io(&path))?;
    for c in &summary.criteria {
        println!("{:<4} {}", c.criterion, c.status);
        for d in &c.detail {
            println!("       {d}");
        }
    }
    for m in &summary.hash_mismatches {
        println!("hash mismatch: {m}");
    }
    for r in summary.runs.iter().filter(|r| !r.missing.is_empty()) {
        println!("run {}: missing {}", r.name, r.missing.join(", "));
    }
    let failed = !summary.hash_consistent || summary.criteria.iter().any(|c| c.status == "fail");
    Ok(if failed { Status::Failure } else { Status::Ok })
}
