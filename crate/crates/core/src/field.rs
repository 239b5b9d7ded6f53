//! Per-mode value arrays on a time-space grid and their columnar text format.
//!
//! ```text
//! # switchopt value-field v1
//! # problem_hash=<hex>
//! # grid=axis1=<lo>:<hi>:<nodes>[;axis2=...]
//! # times=<t0>,<t1>,...,<tN>
//! # scheme=level:<n> | fixed-point | pde
//! # modes=<m>
//! mode,time_index,node_index,x1[,x2],value
//! 1,0,0,0.0,0.4123...
//! ```
//!
//! Modes are one-based in the file. Numbers use Rust's shortest round-trip
//! formatting, so a write/read cycle is bit-exact.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::grid::{Axis, SpaceGrid, TimeGrid};
use crate::problem::ProblemTables;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// At most `n` switches (level 0 is the no-switch value).
    Level(usize),
    FixedPoint,
    Pde,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Level(n) => write!(f, "level:{n}"),
            Scheme::FixedPoint => f.write_str("fixed-point"),
            Scheme::Pde => f.write_str("pde"),
        }
    }
}

impl FromStr for Scheme {
    type Err = FieldFormatError;

    fn from_str(s: &str) -> Result<Scheme, FieldFormatError> {
        match s {
            "fixed-point" => Ok(Scheme::FixedPoint),
            "pde" => Ok(Scheme::Pde),
            _ => s
                .strip_prefix("level:")
                .and_then(|n| n.parse().ok())
                .map(Scheme::Level)
                .ok_or_else(|| FieldFormatError::Header(format!("unknown scheme `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldFormatError {
    #[error("bad header: {0}")]
    Header(String),
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("expected {expected} value rows, found {found}")]
    Count { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    modes: usize,
    times: TimeGrid,
    grid: SpaceGrid,
    /// `[mode][time][node]`
    values: Vec<f64>,
    problem_hash: String,
    scheme: Scheme,
}

impl ValueField {
    pub fn zeros(
        modes: usize,
        times: TimeGrid,
        grid: SpaceGrid,
        problem_hash: impl Into<String>,
        scheme: Scheme,
    ) -> ValueField {
        let len = modes * times.times().len() * grid.node_count();
        ValueField {
            modes,
            times,
            grid,
            values: vec![0.0; len],
            problem_hash: problem_hash.into(),
            scheme,
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

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn set_scheme(&mut self, scheme: Scheme) {
        self.scheme = scheme;
    }

    pub fn steps(&self) -> usize {
        self.times.steps()
    }

    fn offset(&self, i: usize, n: usize) -> usize {
        let nodes = self.grid.node_count();
        (i * self.times.times().len() + n) * nodes
    }

    #[inline]
    pub fn get(&self, i: usize, n: usize, node: usize) -> f64 {
        self.values[self.offset(i, n) + node]
    }

    #[inline]
    pub fn set(&mut self, i: usize, n: usize, node: usize, v: f64) {
        let o = self.offset(i, n);
        self.values[o + node] = v;
    }

    pub fn slice(&self, i: usize, n: usize) -> &[f64] {
        let o = self.offset(i, n);
        &self.values[o..o + self.grid.node_count()]
    }

    pub fn slice_mut(&mut self, i: usize, n: usize) -> &mut [f64] {
        let o = self.offset(i, n);
        let nodes = self.grid.node_count();
        &mut self.values[o..o + nodes]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Multilinear interpolation in space at time index `n`.
    pub fn value_at(&self, i: usize, n: usize, x: &[f64]) -> f64 {
        self.grid.interpolate(self.slice(i, n), x)
    }

    /// `max |self - other|` over all entries (same layout required).
    pub fn sup_distance(&self, other: &ValueField) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "field layouts differ");
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |a, (x, y)| a.max((x - y).abs()))
    }

    /// Smallest entrywise `self - other`.
    pub fn min_increment_over(&self, other: &ValueField) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "field layouts differ");
        self.values
            .iter()
            .zip(&other.values)
            .fold(f64::INFINITY, |a, (x, y)| a.min(x - y))
    }

    pub fn terminal_is_zero(&self) -> bool {
        let n = self.steps();
        (0..self.modes).all(|i| self.slice(i, n).iter().all(|&v| v == 0.0))
    }

    /// Largest `max_{j != i}(-g_ij + V_j) - V_i` over all nodes and times before
    /// the horizon; non-positive when the obstacle inequality holds.
    pub fn obstacle_excess(&self, tables: &ProblemTables) -> f64 {
        let m = self.modes;
        let mut worst = f64::NEG_INFINITY;
        for n in 0..self.steps() {
            for node in 0..self.grid.node_count() {
                for i in 0..m {
                    for j in (0..m).filter(|&j| j != i) {
                        let excess =
                            -tables.cost(n, node, i, j) + self.get(j, n, node) - self.get(i, n, node);
                        worst = worst.max(excess);
                    }
                }
            }
        }
        worst
    }

    pub fn to_text(&self) -> String {
        let nodes = self.grid.node_count();
        let mut s = String::with_capacity(self.values.len() * 40 + 256);
        s += "# switchopt value-field v1\n";
        let _ = writeln!(s, "# problem_hash={}", self.problem_hash);
        let _ = writeln!(s, "# grid={}", self.grid);
        let times: Vec<String> = self.times.times().iter().map(|t| format!("{t:?}")).collect();
        let _ = writeln!(s, "# times={}", times.join(","));
        let _ = writeln!(s, "# scheme={}", self.scheme);
        let _ = writeln!(s, "# modes={}", self.modes);
        s += "mode,time_index,node_index";
        for k in 0..self.grid.dim() {
            let _ = write!(s, ",x{}", k + 1);
        }
        s += ",value\n";
        let points = self.grid.points();
        for i in 0..self.modes {
            for n in 0..self.times.times().len() {
                for (node, x) in points.iter().enumerate().take(nodes) {
                    let _ = write!(s, "{},{n},{node}", i + 1);
                    for c in x {
                        let _ = write!(s, ",{c:?}");
                    }
                    let _ = writeln!(s, ",{:?}", self.get(i, n, node));
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<ValueField, FieldFormatError> {
        let header = |msg: &str| FieldFormatError::Header(msg.to_string());
        let mut hash = None;
        let mut grid = None;
        let mut times = None;
        let mut scheme = None;
        let mut modes = None;
        let mut lines = text.lines().enumerate().peekable();
        while let Some((_, line)) = lines.peek() {
            let Some(rest) = line.strip_prefix('#') else { break };
            lines.next();
            let Some((key, value)) = rest.trim().split_once('=') else { continue };
            match key {
                "problem_hash" => hash = Some(value.to_string()),
                "grid" => grid = Some(parse_grid(value)?),
                "times" => {
                    let ts = value
                        .split(',')
                        .map(|v| v.parse::<f64>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| header("unparsable times"))?;
                    let horizon = *ts.last().ok_or_else(|| header("empty times"))?;
                    times = Some(TimeGrid::from_times(ts, horizon).map_err(|e| header(&e.to_string()))?);
                }
                "scheme" => scheme = Some(value.parse::<Scheme>()?),
                "modes" => modes = Some(value.parse::<usize>().map_err(|_| header("bad mode count"))?),
                _ => {}
            }
        }
        let mut field = ValueField::zeros(
            modes.ok_or_else(|| header("missing modes"))?,
            times.ok_or_else(|| header("missing times"))?,
            grid.ok_or_else(|| header("missing grid"))?,
            hash.ok_or_else(|| header("missing problem_hash"))?,
            scheme.ok_or_else(|| header("missing scheme"))?,
        );
        match lines.next() {
            Some((_, l)) if l.starts_with("mode,") => {}
            _ => return Err(header("missing column header")),
        }
        let dim = field.grid.dim();
        let slices = field.times.times().len();
        let nodes = field.grid.node_count();
        let mut count = 0;
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let row_err = |message: &str| FieldFormatError::Row {
                line: ln + 1,
                message: message.to_string(),
            };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 + dim {
                return Err(row_err("wrong column count"));
            }
            let idx = |c: &str| c.parse::<usize>().map_err(|_| row_err("bad index"));
            let (mode, n, node) = (idx(cols[0])?, idx(cols[1])?, idx(cols[2])?);
            if mode == 0 || mode > field.modes || n >= slices || node >= nodes {
                return Err(row_err("index out of range"));
            }
            let v: f64 = cols[3 + dim].parse().map_err(|_| row_err("bad value"))?;
            field.set(mode - 1, n, node, v);
            count += 1;
        }
        let expected = field.values.len();
        if count != expected {
            return Err(FieldFormatError::Count {
                expected,
                found: count,
            });
        }
        Ok(field)
    }
}

fn parse_grid(s: &str) -> Result<SpaceGrid, FieldFormatError> {
    let bad = || FieldFormatError::Header(format!("bad grid `{s}`"));
    let mut axes = Vec::new();
    for part in s.split(';') {
        let (_, spec) = part.split_once('=').ok_or_else(bad)?;
        let f: Vec<&str> = spec.split(':').collect();
        if f.len() != 3 {
            return Err(bad());
        }
        let lo = f[0].parse().map_err(|_| bad())?;
        let hi = f[1].parse().map_err(|_| bad())?;
        let nodes = f[2].parse().map_err(|_| bad())?;
        axes.push(Axis::new(lo, hi, nodes));
    }
    SpaceGrid::new(axes).map_err(|e| FieldFormatError::Header(e.to_string()))
}
