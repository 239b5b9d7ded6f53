//! Problem instances: horizon, diffusion, per-mode profit rates and the
//! signed switching-cost matrix.
//!
//! Modes are zero-based in the library API (`0..m`). Configuration files and
//! reports print them one-based.

mod tables;
mod validate;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exprlang::{EvalError, Expr, ParseError};

pub use tables::ProblemTables;
pub use validate::{validate, CheckResult, SampleGrid, ValidateError, ValidationReport, Witness};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("horizon must be positive and finite, got {0}")]
    Horizon(f64),
    #[error("{what} must be at least 1")]
    ZeroCount { what: &'static str },
    #[error("{field}: expected {expected} entries, found {found}")]
    Shape {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{field}: {source}")]
    Parse {
        field: String,
        #[source]
        source: ParseError,
    },
    #[error("initial mode {0} is out of range")]
    InitialMode(usize),
    #[error("initial state must be finite")]
    InitialState,
}

/// Expression strings and scalars describing a problem, before compilation.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSource {
    pub horizon: f64,
    pub state_dim: usize,
    pub brownian_dim: usize,
    /// `state_dim` entries.
    pub drift: Vec<String>,
    /// `state_dim` rows of `brownian_dim` entries.
    pub vol: Vec<Vec<String>>,
    /// One rate per mode; the mode count is `profit.len()`.
    pub profit: Vec<String>,
    /// `m` rows of `m` entries; diagonal entries must be present (normally `"0"`).
    pub cost: Vec<Vec<String>>,
    pub initial_mode: usize,
    pub x0: Vec<f64>,
    pub neg_cost_bound: usize,
}

impl ProblemSource {
    /// One-dimensional problem with a single Brownian motion and zero
    /// diagonal costs. `cost` lists the full matrix row by row.
    pub fn one_dim(
        horizon: f64,
        drift: &str,
        vol: &str,
        profit: &[&str],
        cost: &[&[&str]],
        x0: f64,
    ) -> ProblemSource {
        ProblemSource {
            horizon,
            state_dim: 1,
            brownian_dim: 1,
            drift: vec![drift.to_string()],
            vol: vec![vec![vol.to_string()]],
            profit: profit.iter().map(|s| s.to_string()).collect(),
            cost: cost
                .iter()
                .map(|row| row.iter().map(|s| s.to_string()).collect())
                .collect(),
            initial_mode: 0,
            x0: vec![x0],
            neg_cost_bound: 0,
        }
    }

    pub fn with_neg_cost_bound(mut self, k: usize) -> ProblemSource {
        self.neg_cost_bound = k;
        self
    }

    pub fn with_initial_mode(mut self, mode: usize) -> ProblemSource {
        self.initial_mode = mode;
        self
    }

    pub fn compile(&self) -> Result<SwitchingProblem, ProblemError> {
        SwitchingProblem::new(self)
    }
}

/// A compiled, immutable problem instance.
#[derive(Debug, Clone)]
pub struct SwitchingProblem {
    horizon: f64,
    state_dim: usize,
    brownian_dim: usize,
    drift: Vec<Expr>,
    vol: Vec<Vec<Expr>>,
    profit: Vec<Expr>,
    cost: Vec<Vec<Expr>>,
    initial_mode: usize,
    x0: Vec<f64>,
    neg_cost_bound: usize,
    hash: String,
}

fn shape(field: &'static str, expected: usize, found: usize) -> Result<(), ProblemError> {
    if expected == found {
        Ok(())
    } else {
        Err(ProblemError::Shape {
            field,
            expected,
            found,
        })
    }
}

impl SwitchingProblem {
    pub fn new(src: &ProblemSource) -> Result<SwitchingProblem, ProblemError> {
        if !(src.horizon > 0.0 && src.horizon.is_finite()) {
            return Err(ProblemError::Horizon(src.horizon));
        }
        let k = src.state_dim;
        let d = src.brownian_dim;
        let m = src.profit.len();
        if k == 0 {
            return Err(ProblemError::ZeroCount { what: "state_dim" });
        }
        if d == 0 {
            return Err(ProblemError::ZeroCount {
                what: "brownian_dim",
            });
        }
        if m == 0 {
            return Err(ProblemError::ZeroCount { what: "modes" });
        }
        shape("drift", k, src.drift.len())?;
        shape("sigma rows", k, src.vol.len())?;
        for row in &src.vol {
            shape("sigma columns", d, row.len())?;
        }
        shape("cost rows", m, src.cost.len())?;
        for row in &src.cost {
            shape("cost columns", m, row.len())?;
        }
        shape("x0", k, src.x0.len())?;
        if src.initial_mode >= m {
            return Err(ProblemError::InitialMode(src.initial_mode));
        }
        if src.x0.iter().any(|v| !v.is_finite()) {
            return Err(ProblemError::InitialState);
        }

        let compile = |field: String, s: &str| {
            Expr::parse(s, k).map_err(|source| ProblemError::Parse { field, source })
        };
        let drift = src
            .drift
            .iter()
            .enumerate()
            .map(|(a, s)| compile(format!("drift.{}", a + 1), s))
            .collect::<Result<Vec<_>, _>>()?;
        let vol = src
            .vol
            .iter()
            .enumerate()
            .map(|(a, row)| {
                row.iter()
                    .enumerate()
                    .map(|(b, s)| compile(format!("sigma.{}.{}", a + 1, b + 1), s))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let profit = src
            .profit
            .iter()
            .enumerate()
            .map(|(i, s)| compile(format!("profit.{}", i + 1), s))
            .collect::<Result<Vec<_>, _>>()?;
        let cost = src
            .cost
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, s)| compile(format!("cost.{}.{}", i + 1, j + 1), s))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut p = SwitchingProblem {
            horizon: src.horizon,
            state_dim: k,
            brownian_dim: d,
            drift,
            vol,
            profit,
            cost,
            initial_mode: src.initial_mode,
            x0: src.x0.clone(),
            neg_cost_bound: src.neg_cost_bound,
            hash: String::new(),
        };
        p.hash = p.compute_hash();
        Ok(p)
    }

    /// Canonical text of the instance; equal problems print identically.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        s += &format!("horizon={:?}\n", self.horizon);
        s += &format!("state_dim={}\nbrownian_dim={}\n", self.state_dim, self.brownian_dim);
        for (a, e) in self.drift.iter().enumerate() {
            s += &format!("drift.{}={e}\n", a + 1);
        }
        for (a, row) in self.vol.iter().enumerate() {
            for (b, e) in row.iter().enumerate() {
                s += &format!("sigma.{}.{}={e}\n", a + 1, b + 1);
            }
        }
        for (i, e) in self.profit.iter().enumerate() {
            s += &format!("profit.{}={e}\n", i + 1);
        }
        for (i, row) in self.cost.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                s += &format!("cost.{}.{}={e}\n", i + 1, j + 1);
            }
        }
        s += &format!("initial_mode={}\n", self.initial_mode + 1);
        s += &format!("x0={:?}\n", self.x0);
        s += &format!("neg_cost_bound={}\n", self.neg_cost_bound);
        s
    }

    fn compute_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Short hex digest of [`Self::canonical`]; stamped on every output file.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn brownian_dim(&self) -> usize {
        self.brownian_dim
    }

    pub fn mode_count(&self) -> usize {
        self.profit.len()
    }

    pub fn initial_mode(&self) -> usize {
        self.initial_mode
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn neg_cost_bound(&self) -> usize {
        self.neg_cost_bound
    }

    pub fn profit_expr(&self, i: usize) -> &Expr {
        &self.profit[i]
    }

    pub fn cost_expr(&self, i: usize, j: usize) -> &Expr {
        &self.cost[i][j]
    }

    pub fn drift_expr(&self, a: usize) -> &Expr {
        &self.drift[a]
    }

    pub fn vol_expr(&self, a: usize, b: usize) -> &Expr {
        &self.vol[a][b]
    }

    /// True if any of b, sigma depends on t.
    pub fn diffusion_depends_on_time(&self) -> bool {
        self.drift.iter().any(Expr::depends_on_time)
            || self.vol.iter().flatten().any(Expr::depends_on_time)
    }

    /// Profit rate of mode `i` at `(t, x)`.
    pub fn profit_rate(&self, i: usize, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        self.profit[i].eval(t, x)
    }

    /// Cost of switching `i -> j` at `(t, x)`; the diagonal is zero without evaluation.
    pub fn switch_cost(&self, i: usize, j: usize, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        if i == j {
            return Ok(0.0);
        }
        self.cost[i][j].eval(t, x)
    }

    /// Raw evaluation of a diagonal cost entry, used by the validator.
    pub(crate) fn diagonal_cost(&self, i: usize, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        self.cost[i][i].eval(t, x)
    }

    pub fn drift(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.drift.iter().map(|e| e.eval(t, x)).collect()
    }

    /// Volatility matrix, row-major `k x d`.
    pub fn vol(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.vol.iter().flatten().map(|e| e.eval(t, x)).collect()
    }

    /// `sigma sigma^T`, row-major `k x k`.
    pub fn covariance(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let s = self.vol(t, x)?;
        let (k, d) = (self.state_dim, self.brownian_dim);
        let mut a = vec![0.0; k * k];
        for r in 0..k {
            for c in 0..k {
                let mut acc = 0.0;
                for q in 0..d {
                    acc += s[r * d + q] * s[c * d + q];
                }
                a[r * k + c] = acc;
            }
        }
        Ok(a)
    }
}
