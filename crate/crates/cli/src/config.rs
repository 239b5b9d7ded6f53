//! Run configuration files.
//!
//! ```text
//! # comment
//! [problem]
//! horizon = 1
//! state_dim = 1          # optional, default 1
//! brownian_dim = 1       # optional, default state_dim
//! modes = 2
//! drift.1 = "0.05*x1"
//! sigma.1.1 = "0.2*x1"
//! profit.1 = "x1 - 4"
//! profit.2 = "2 - 0.5*x1"
//! cost.1.2 = "0.3"       # diagonal entries default to "0"
//! cost.2.1 = "0.3"
//! x0 = 4                 # comma separated when state_dim > 1
//! initial_mode = 1       # optional, default 1
//! neg_cost_bound = 0     # optional, default 0
//!
//! [grid]
//! steps = 200
//! x_lo = 0
//! x_hi = 9.95
//! nodes = 200
//! stencil = adaptive     # or adjacent
//!
//! [solver]
//! engine = both          # lattice, pde or both
//! tol = 1e-8
//! max_outer = 50
//! switch_tol = 1e-9
//! pde_drift = central    # or upwind
//! refine_check = false
//!
//! [simulate]
//! paths = 10000
//! seed = 1
//! substeps = 1
//! strategy_paths = 10000 # per strategy compared with --strategy
//!
//! [output]
//! directory = "out"
//! formats = text, csv
//! criteria = A1, A2
//! ```
//!
//! Values may be quoted with double quotes; quoted values keep `#` and
//! surrounding spaces. Every key is required unless marked optional.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use switchopt_core::pde::DriftScheme;
use switchopt_core::problem::ProblemSource;
use switchopt_core::{Axis, Expr, GridSpec, SpaceGrid, StencilMode, TimeGrid};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct ConfigError {
    /// One-based; 0 when the problem is not tied to a line.
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        line,
        message: message.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Lattice,
    Pde,
    Both,
}

impl Engine {
    pub fn lattice(self) -> bool {
        matches!(self, Engine::Lattice | Engine::Both)
    }

    pub fn pde(self) -> bool {
        matches!(self, Engine::Pde | Engine::Both)
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Lattice => "lattice",
            Engine::Pde => "pde",
            Engine::Both => "both",
        })
    }
}

impl FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Engine, String> {
        match s {
            "lattice" => Ok(Engine::Lattice),
            "pde" => Ok(Engine::Pde),
            "both" => Ok(Engine::Both),
            _ => Err(format!("unknown engine `{s}` (expected lattice, pde or both)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSection {
    pub steps: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub nodes: Vec<usize>,
    pub stencil: StencilMode,
}

impl GridSection {
    pub fn space(&self) -> SpaceGrid {
        let axes = (0..self.nodes.len())
            .map(|k| Axis::new(self.lo[k], self.hi[k], self.nodes[k]))
            .collect();
        SpaceGrid::new(axes).expect("checked when the configuration was parsed")
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec::new(self.space().axes().to_vec(), self.steps)
            .expect("checked when the configuration was parsed")
            .with_stencil(self.stencil)
    }

    pub fn times(&self, horizon: f64) -> TimeGrid {
        TimeGrid::uniform(horizon, self.steps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSection {
    pub engine: Engine,
    pub tol: f64,
    pub max_outer: usize,
    /// Indifference margin when reading a policy off a value field.
    pub switch_tol: f64,
    pub pde_drift: DriftScheme,
    /// Also solve on the grid with both spacings halved.
    pub refine_check: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSection {
    pub paths: usize,
    pub seed: u64,
    pub substeps: usize,
    /// Paths per explicit strategy in a dominance comparison.
    pub strategy_paths: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
    /// Acceptance checks this run is meant to demonstrate, e.g. `A8:reject`.
    pub criteria: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Format {
    /// Value fields, traces, reports.
    Text,
    /// Value surfaces and switch regions as CSV matrices.
    Csv,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Format, String> {
        match s {
            "text" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            _ => Err(format!("unknown output format `{s}` (expected text or csv)")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Text => "text",
            Format::Csv => "csv",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSource,
    pub grid: GridSection,
    pub solver: SolverSection,
    pub simulate: SimulateSection,
    pub output: OutputSection,
}

const SECTIONS: [&str; 5] = ["problem", "grid", "solver", "simulate", "output"];

struct Entry {
    line: usize,
    value: String,
}

/// Raw `(section, key) -> value` table with line numbers.
struct Table {
    entries: BTreeMap<(String, String), Entry>,
    used: std::cell::RefCell<std::collections::BTreeSet<(String, String)>>,
}

impl Table {
    fn parse(text: &str) -> Result<Table, ConfigError> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return err(line, "unterminated section header");
                };
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return err(line, format!("unknown section [{name}]"));
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return err(line, "expected `key = value`");
            };
            let Some(sec) = &section else {
                return err(line, "key outside of any section");
            };
            let key = key.trim();
            if key.is_empty() {
                return err(line, "empty key");
            }
            let value = unquote(value.trim(), line)?;
            let slot = (sec.clone(), key.to_string());
            if let Some(prev) = entries.get(&slot) {
                let prev: &Entry = prev;
                return err(line, format!("duplicate key `{key}` (first set on line {})", prev.line));
            }
            entries.insert(slot, Entry { line, value });
        }
        Ok(Table {
            entries,
            used: Default::default(),
        })
    }

    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        let slot = (section.to_string(), key.to_string());
        let e = self.entries.get(&slot);
        if e.is_some() {
            self.used.borrow_mut().insert(slot);
        }
        e
    }

    fn require(&self, section: &str, key: &str) -> Result<&Entry, ConfigError> {
        self.get(section, key)
            .map_or_else(|| err(0, format!("missing key `{key}` in [{section}]")), Ok)
    }

    fn parsed<T: FromStr>(&self, section: &str, key: &str, default: Option<T>) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.get(section, key) {
            Some(e) => e
                .value
                .parse()
                .map_err(|why| ConfigError {
                    line: e.line,
                    message: format!("`{key}`: {why}"),
                }),
            None => default.map_or_else(|| err(0, format!("missing key `{key}` in [{section}]")), Ok),
        }
    }

    fn list<T: FromStr>(&self, section: &str, key: &str) -> Result<(Vec<T>, usize), ConfigError>
    where
        T::Err: fmt::Display,
    {
        let e = self.require(section, key)?;
        let items = e
            .value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|why| ConfigError {
                    line: e.line,
                    message: format!("`{key}`: {why}"),
                })
            })
            .collect::<Result<Vec<T>, _>>()?;
        Ok((items, e.line))
    }

    fn unused(&self) -> Option<(&(String, String), &Entry)> {
        let used = self.used.borrow();
        self.entries.iter().find(|(k, _)| !used.contains(*k))
    }
}

fn unquote(v: &str, line: usize) -> Result<String, ConfigError> {
    if let Some(rest) = v.strip_prefix('"') {
        let Some(end) = rest.find('"') else {
            return err(line, "unterminated quoted value");
        };
        let tail = rest[end + 1..].trim();
        if !(tail.is_empty() || tail.starts_with('#')) {
            return err(line, format!("unexpected text after quoted value: `{tail}`"));
        }
        return Ok(rest[..end].to_string());
    }
    let v = match v.find('#') {
        Some(k) => &v[..k],
        None => v,
    };
    Ok(v.trim().to_string())
}

fn expression(table: &Table, key: &str, dim: usize, default: Option<&str>) -> Result<String, ConfigError> {
    let (line, value) = match table.get("problem", key) {
        Some(e) => (e.line, e.value.clone()),
        None => match default {
            Some(d) => return Ok(d.to_string()),
            None => return err(0, format!("missing key `{key}` in [problem]")),
        },
    };
    Expr::parse(&value, dim).map_err(|e| ConfigError {
        line,
        message: format!("`{key}`: {e}"),
    })?;
    Ok(value)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let t = Table::parse(text)?;

        let horizon: f64 = t.parsed("problem", "horizon", None)?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return err(t.require("problem", "horizon")?.line, "`horizon` must be positive");
        }
        let k: usize = t.parsed("problem", "state_dim", Some(1))?;
        if !(1..=2).contains(&k) {
            return err(line_of(&t, "problem", "state_dim"), "`state_dim` must be 1 or 2");
        }
        let d: usize = t.parsed("problem", "brownian_dim", Some(k))?;
        if d == 0 {
            return err(line_of(&t, "problem", "brownian_dim"), "`brownian_dim` must be at least 1");
        }
        let m: usize = t.parsed("problem", "modes", None)?;
        if m == 0 {
            return err(line_of(&t, "problem", "modes"), "`modes` must be at least 1");
        }
        let drift = (1..=k)
            .map(|a| expression(&t, &format!("drift.{a}"), k, None))
            .collect::<Result<Vec<_>, _>>()?;
        let vol = (1..=k)
            .map(|a| {
                (1..=d)
                    .map(|b| expression(&t, &format!("sigma.{a}.{b}"), k, None))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let profit = (1..=m)
            .map(|i| expression(&t, &format!("profit.{i}"), k, None))
            .collect::<Result<Vec<_>, _>>()?;
        let cost = (1..=m)
            .map(|i| {
                (1..=m)
                    .map(|j| expression(&t, &format!("cost.{i}.{j}"), k, (i == j).then_some("0")))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (x0, x0_line) = t.list::<f64>("problem", "x0")?;
        if x0.len() != k {
            return err(x0_line, format!("`x0` needs {k} coordinates, found {}", x0.len()));
        }
        let initial_mode: usize = t.parsed("problem", "initial_mode", Some(1))?;
        if initial_mode == 0 || initial_mode > m {
            return err(line_of(&t, "problem", "initial_mode"), format!("`initial_mode` must be in 1..={m}"));
        }
        let neg_cost_bound = t.parsed("problem", "neg_cost_bound", Some(0))?;
        let problem = ProblemSource {
            horizon,
            state_dim: k,
            brownian_dim: d,
            drift,
            vol,
            profit,
            cost,
            initial_mode: initial_mode - 1,
            x0,
            neg_cost_bound,
        };

        let steps: usize = t.parsed("grid", "steps", None)?;
        if steps == 0 {
            return err(line_of(&t, "grid", "steps"), "`steps` must be at least 1");
        }
        let (lo, lo_line) = t.list::<f64>("grid", "x_lo")?;
        let (hi, hi_line) = t.list::<f64>("grid", "x_hi")?;
        let (nodes, nodes_line) = t.list::<usize>("grid", "nodes")?;
        for (name, len, line) in [("x_lo", lo.len(), lo_line), ("x_hi", hi.len(), hi_line), ("nodes", nodes.len(), nodes_line)] {
            if len != k {
                return err(line, format!("`{name}` needs {k} entries, found {len}"));
            }
        }
        for a in 0..k {
            if !(lo[a] < hi[a]) || !lo[a].is_finite() || !hi[a].is_finite() {
                return err(hi_line, format!("axis {}: need x_lo < x_hi", a + 1));
            }
            if nodes[a] < 3 {
                return err(nodes_line, format!("axis {}: need at least 3 nodes", a + 1));
            }
        }
        let stencil = match t.get("grid", "stencil") {
            Some(e) => StencilMode::from_name(&e.value).map_or_else(
                || err(e.line, format!("unknown stencil `{}` (expected adaptive or adjacent)", e.value)),
                Ok,
            )?,
            None => StencilMode::default(),
        };
        let grid = GridSection {
            steps,
            lo,
            hi,
            nodes,
            stencil,
        };
        for a in 0..k {
            if !(grid.lo[a] <= problem.x0[a] && problem.x0[a] <= grid.hi[a]) {
                return err(x0_line, format!("`x0` coordinate {} lies outside the grid", a + 1));
            }
        }

        let engine = t.parsed("solver", "engine", Some(Engine::Both))?;
        let tol: f64 = t.parsed("solver", "tol", Some(1e-8))?;
        if !(tol > 0.0) {
            return err(line_of(&t, "solver", "tol"), "`tol` must be positive");
        }
        let max_outer = t.parsed("solver", "max_outer", Some(50))?;
        let switch_tol: f64 = t.parsed("solver", "switch_tol", Some(1e-9))?;
        if !(switch_tol > 0.0) {
            return err(line_of(&t, "solver", "switch_tol"), "`switch_tol` must be positive");
        }
        let pde_drift = match t.get("solver", "pde_drift") {
            Some(e) => DriftScheme::from_name(&e.value).map_or_else(
                || err(e.line, format!("unknown pde_drift `{}` (expected central or upwind)", e.value)),
                Ok,
            )?,
            None => DriftScheme::default(),
        };
        let refine_check = t.parsed("solver", "refine_check", Some(false))?;
        let solver = SolverSection {
            engine,
            tol,
            max_outer,
            switch_tol,
            pde_drift,
            refine_check,
        };

        let paths: usize = t.parsed("simulate", "paths", Some(10_000))?;
        if paths == 0 {
            return err(line_of(&t, "simulate", "paths"), "`paths` must be at least 1");
        }
        let substeps: usize = t.parsed("simulate", "substeps", Some(1))?;
        if substeps == 0 {
            return err(line_of(&t, "simulate", "substeps"), "`substeps` must be at least 1");
        }
        let strategy_paths: usize = t.parsed("simulate", "strategy_paths", Some(10_000))?;
        if strategy_paths == 0 {
            return err(line_of(&t, "simulate", "strategy_paths"), "`strategy_paths` must be at least 1");
        }
        let simulate = SimulateSection {
            paths,
            seed: t.parsed("simulate", "seed", Some(1))?,
            substeps,
            strategy_paths,
        };

        let directory = t.get("output", "directory").map_or_else(|| PathBuf::from("out"), |e| PathBuf::from(&e.value));
        let mut formats = if t.get("output", "formats").is_some() {
            t.list::<Format>("output", "formats")?.0
        } else {
            vec![Format::Text, Format::Csv]
        };
        formats.sort();
        formats.dedup();
        let criteria = if t.get("output", "criteria").is_some() {
            let (c, line) = t.list::<String>("output", "criteria")?;
            for name in &c {
                if !crate::report::is_criterion(name) {
                    return err(line, format!("unknown criterion `{name}`"));
                }
            }
            c
        } else {
            Vec::new()
        };
        let output = OutputSection {
            directory,
            formats,
            criteria,
        };

        if let Some(((sec, key), e)) = t.unused() {
            return err(e.line, format!("unknown key `{key}` in [{sec}]"));
        }
        Ok(RunConfig {
            problem,
            grid,
            solver,
            simulate,
            output,
        })
    }

    /// Canonical rendering; parses back to an identical configuration.
    pub fn to_text(&self) -> String {
        let p = &self.problem;
        let mut s = String::new();
        let q = |v: &str| format!("\"{v}\"");
        let floats = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        s += "[problem]\n";
        let _ = writeln!(s, "horizon = {:?}", p.horizon);
        let _ = writeln!(s, "state_dim = {}", p.state_dim);
        let _ = writeln!(s, "brownian_dim = {}", p.brownian_dim);
        let _ = writeln!(s, "modes = {}", p.profit.len());
        for (a, e) in p.drift.iter().enumerate() {
            let _ = writeln!(s, "drift.{} = {}", a + 1, q(e));
        }
        for (a, row) in p.vol.iter().enumerate() {
            for (b, e) in row.iter().enumerate() {
                let _ = writeln!(s, "sigma.{}.{} = {}", a + 1, b + 1, q(e));
            }
        }
        for (i, e) in p.profit.iter().enumerate() {
            let _ = writeln!(s, "profit.{} = {}", i + 1, q(e));
        }
        for (i, row) in p.cost.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                let _ = writeln!(s, "cost.{}.{} = {}", i + 1, j + 1, q(e));
            }
        }
        let _ = writeln!(s, "x0 = {}", floats(&p.x0));
        let _ = writeln!(s, "initial_mode = {}", p.initial_mode + 1);
        let _ = writeln!(s, "neg_cost_bound = {}", p.neg_cost_bound);

        let g = &self.grid;
        s += "\n[grid]\n";
        let _ = writeln!(s, "steps = {}", g.steps);
        let _ = writeln!(s, "x_lo = {}", floats(&g.lo));
        let _ = writeln!(s, "x_hi = {}", floats(&g.hi));
        let nodes: Vec<String> = g.nodes.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "nodes = {}", nodes.join(", "));
        let _ = writeln!(s, "stencil = {}", g.stencil.name());

        let v = &self.solver;
        s += "\n[solver]\n";
        let _ = writeln!(s, "engine = {}", v.engine);
        let _ = writeln!(s, "tol = {:?}", v.tol);
        let _ = writeln!(s, "max_outer = {}", v.max_outer);
        let _ = writeln!(s, "switch_tol = {:?}", v.switch_tol);
        let _ = writeln!(s, "pde_drift = {}", v.pde_drift.name());
        let _ = writeln!(s, "refine_check = {}", v.refine_check);

        let m = &self.simulate;
        s += "\n[simulate]\n";
        let _ = writeln!(s, "paths = {}", m.paths);
        let _ = writeln!(s, "seed = {}", m.seed);
        let _ = writeln!(s, "substeps = {}", m.substeps);
        let _ = writeln!(s, "strategy_paths = {}", m.strategy_paths);

        let o = &self.output;
        s += "\n[output]\n";
        let _ = writeln!(s, "directory = {}", q(&o.directory.to_string_lossy()));
        let formats: Vec<String> = o.formats.iter().map(Format::to_string).collect();
        let _ = writeln!(s, "formats = {}", formats.join(", "));
        if !o.criteria.is_empty() {
            let _ = writeln!(s, "criteria = {}", o.criteria.join(", "));
        }
        s
    }
}

fn line_of(t: &Table, section: &str, key: &str) -> usize {
    t.get(section, key).map_or(0, |e| e.line)
}
