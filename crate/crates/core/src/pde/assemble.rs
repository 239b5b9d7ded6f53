use rayon::prelude::*;
use thiserror::Error;

use crate::exprlang::EvalError;
use crate::grid::{SpaceGrid, TimeGrid};
use crate::problem::SwitchingProblem;

/// Relative slack on coefficient signs.
const SIGN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeneratorError {
    #[error("finite differences support state dimension 1 or 2, got {0}")]
    Dimension(usize),
    #[error("grid has dimension {grid} but the problem has state dimension {problem}")]
    GridMismatch { grid: usize, problem: usize },
    #[error("coefficient evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error(
        "cross-diffusion breaks monotonicity at node {node} (x={x:?}, time index {time_index}): \
         |c12| / (hx hy) exceeds the axis weight by {excess:.3e}; \
         align the grid with the principal axes of sigma sigma^T or rescale the spacings"
    )]
    CrossTerm {
        node: usize,
        x: Vec<f64>,
        time_index: usize,
        excess: f64,
    },
    #[error("generator row at node {node} (time index {time_index}) is not monotone: {what}")]
    Monotonicity {
        node: usize,
        time_index: usize,
        what: &'static str,
    },
}

/// Numeric checks collected while assembling.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GeneratorAudit {
    pub rows: usize,
    /// Smallest off-diagonal coefficient (never negative).
    pub min_off_diagonal: f64,
    /// Largest diagonal coefficient (never positive).
    pub max_diagonal: f64,
    /// Largest `|row sum|`, zero up to rounding.
    pub max_row_sum: f64,
    /// Axis-rows differenced centrally / upwind.
    pub central_drift: usize,
    pub upwind_drift: usize,
    /// Boundary rows whose outward drift component was discarded.
    pub outward_drift_dropped: usize,
    /// Largest spacing for which central drift differences would still be
    /// monotone at every interior node (infinite without drift).
    pub central_dx_bound: f64,
}

#[derive(Debug, Clone)]
struct Slice {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Spatial discretization `A_h` of the generator
/// `(A v)(x) = b . grad v + 1/2 tr(sigma sigma^T D^2 v)`.
///
/// Second differences are central. First differences are central where that
/// keeps off-diagonal weights non-negative and upwind otherwise. Boundary rows
/// drop the curvature along the bounding axis, and any drift pointing out of
/// the grid. Each row has non-negative off-diagonal entries and sums to zero.
#[derive(Debug, Clone)]
pub struct DiscreteGenerator {
    grid: SpaceGrid,
    slices: Vec<Slice>,
    audit: GeneratorAudit,
}

impl DiscreteGenerator {
    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }

    pub fn audit(&self) -> &GeneratorAudit {
        &self.audit
    }

    pub fn is_time_homogeneous(&self) -> bool {
        self.slices.len() == 1
    }

    fn slice(&self, n: usize) -> &Slice {
        &self.slices[n.min(self.slices.len() - 1)]
    }

    /// Entries `(column, coefficient)` of the row of `node` at time index `n`,
    /// diagonal included.
    pub fn row(&self, n: usize, node: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = self.slice(n);
        let r = s.offsets[node]..s.offsets[node + 1];
        s.cols[r.clone()].iter().copied().zip(s.vals[r].iter().copied())
    }

    /// `out = A_h(t_n) v`.
    pub fn apply(&self, n: usize, v: &[f64], out: &mut [f64]) {
        for (node, o) in out.iter_mut().enumerate() {
            *o = self.row(n, node).map(|(c, a)| a * v[c]).sum();
        }
    }

    /// Largest node offset between a row and any of its columns.
    pub fn bandwidth(&self) -> usize {
        match self.grid.dim() {
            1 => 1,
            _ => self.grid.axes()[0].nodes + 1,
        }
    }
}

/// First-difference scheme for the drift term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriftScheme {
    /// Always one-sided in the direction of the drift.
    Upwind,
    /// Central wherever the diffusion weight keeps the row monotone, upwind
    /// elsewhere.
    #[default]
    CentralWhereMonotone,
}

impl DriftScheme {
    pub fn name(self) -> &'static str {
        match self {
            DriftScheme::Upwind => "upwind",
            DriftScheme::CentralWhereMonotone => "central",
        }
    }

    pub fn from_name(s: &str) -> Option<DriftScheme> {
        match s {
            "upwind" => Some(DriftScheme::Upwind),
            "central" => Some(DriftScheme::CentralWhereMonotone),
            _ => None,
        }
    }
}

/// Assembles the generator on `grid` for every step of `times` (once when the
/// coefficients do not depend on time).
pub fn assemble(
    p: &SwitchingProblem,
    grid: &SpaceGrid,
    times: &TimeGrid,
) -> Result<DiscreteGenerator, GeneratorError> {
    assemble_with(p, grid, times, DriftScheme::default())
}

pub fn assemble_with(
    p: &SwitchingProblem,
    grid: &SpaceGrid,
    times: &TimeGrid,
    drift: DriftScheme,
) -> Result<DiscreteGenerator, GeneratorError> {
    let d = p.state_dim();
    if !(1..=2).contains(&d) {
        return Err(GeneratorError::Dimension(d));
    }
    if grid.dim() != d {
        return Err(GeneratorError::GridMismatch {
            grid: grid.dim(),
            problem: d,
        });
    }
    let time_dependent =
        p.diffusion_depends_on_time() || (0..d).any(|a| p.drift_expr(a).depends_on_time());
    let count = if time_dependent { times.steps().max(1) } else { 1 };
    let built: Vec<(Slice, GeneratorAudit)> = (0..count)
        .into_par_iter()
        .map(|n| assemble_slice(p, grid, times.times()[n], n, drift))
        .collect::<Result<_, _>>()?;
    let mut audit = GeneratorAudit {
        min_off_diagonal: f64::INFINITY,
        max_diagonal: f64::NEG_INFINITY,
        central_dx_bound: f64::INFINITY,
        ..Default::default()
    };
    let mut slices = Vec::with_capacity(built.len());
    for (s, a) in built {
        audit.rows += a.rows;
        audit.min_off_diagonal = audit.min_off_diagonal.min(a.min_off_diagonal);
        audit.max_diagonal = audit.max_diagonal.max(a.max_diagonal);
        audit.max_row_sum = audit.max_row_sum.max(a.max_row_sum);
        audit.outward_drift_dropped += a.outward_drift_dropped;
        audit.central_drift += a.central_drift;
        audit.upwind_drift += a.upwind_drift;
        audit.central_dx_bound = audit.central_dx_bound.min(a.central_dx_bound);
        slices.push(s);
    }
    if audit.min_off_diagonal == f64::INFINITY {
        audit.min_off_diagonal = 0.0;
    }
    Ok(DiscreteGenerator {
        grid: grid.clone(),
        slices,
        audit,
    })
}

struct Row {
    entries: Vec<(usize, f64)>,
    central: usize,
    upwind: usize,
    dropped: usize,
    dx_bound: f64,
}

fn build_row(
    p: &SwitchingProblem,
    grid: &SpaceGrid,
    h: &[f64],
    t: f64,
    n: usize,
    node: usize,
    drift: DriftScheme,
) -> Result<Row, GeneratorError> {
    let d = grid.dim();
    let x = grid.point(node);
    let b = p.drift(t, &x)?;
    let c = p.covariance(t, &x)?;
    let idx = grid.multi_index(node);
    let at = [idx[0] as isize, idx[1] as isize];
    let mut row = Row {
        entries: Vec::with_capacity(9),
        central: 0,
        upwind: 0,
        dropped: 0,
        dx_bound: f64::INFINITY,
    };
    let push = |entries: &mut Vec<(usize, f64)>, col: [isize; 2], w: f64| {
        if w != 0.0 {
            entries.push((grid.node_index([col[0] as usize, col[1] as usize]), w));
        }
    };
    let lo: Vec<bool> = (0..d).map(|a| idx[a] == 0).collect();
    let hi: Vec<bool> = (0..d).map(|a| idx[a] + 1 == grid.axes()[a].nodes).collect();
    let interior = (0..d).all(|a| !lo[a] && !hi[a]);

    // Weight left on each axis neighbour by the second differences.
    let mut axis_w = [0.0; 2];
    for a in 0..d {
        if !lo[a] && !hi[a] {
            axis_w[a] = 0.5 * c[a * d + a] / (h[a] * h[a]);
        }
    }
    if d == 2 && interior && c[1] != 0.0 {
        let c12 = c[1];
        let w = c12.abs() / (2.0 * h[0] * h[1]);
        let s: isize = if c12 > 0.0 { 1 } else { -1 };
        push(&mut row.entries, [at[0] + 1, at[1] + s], w);
        push(&mut row.entries, [at[0] - 1, at[1] - s], w);
        for a in 0..2 {
            let excess = w - axis_w[a];
            if excess > SIGN_TOL * axis_w[a].max(w) {
                return Err(GeneratorError::CrossTerm {
                    node,
                    x,
                    time_index: n,
                    excess: excess * 2.0,
                });
            }
            axis_w[a] = (axis_w[a] - w).max(0.0);
        }
    }

    for a in 0..d {
        let mut up = axis_w[a];
        let mut down = axis_w[a];
        let half = b[a] / (2.0 * h[a]);
        if !lo[a] && !hi[a] && b[a] != 0.0 {
            row.dx_bound = row.dx_bound.min(c[a * d + a] / b[a].abs());
        }
        if b[a] != 0.0 {
            let central_ok = !lo[a] && !hi[a] && axis_w[a] >= half.abs();
            if drift == DriftScheme::CentralWhereMonotone && central_ok {
                up += half;
                down -= half;
                row.central += 1;
            } else if b[a] > 0.0 {
                if hi[a] {
                    row.dropped += 1;
                } else {
                    up += b[a] / h[a];
                    row.upwind += 1;
                }
            } else if lo[a] {
                row.dropped += 1;
            } else {
                down -= b[a] / h[a];
                row.upwind += 1;
            }
        }
        let mut plus = at;
        plus[a] += 1;
        let mut minus = at;
        minus[a] -= 1;
        push(&mut row.entries, plus, up);
        push(&mut row.entries, minus, down);
    }
    row.entries = merge(node, std::mem::take(&mut row.entries));
    Ok(row)
}

fn assemble_slice(
    p: &SwitchingProblem,
    grid: &SpaceGrid,
    t: f64,
    n: usize,
    drift: DriftScheme,
) -> Result<(Slice, GeneratorAudit), GeneratorError> {
    let h: Vec<f64> = grid.axes().iter().map(|a| a.spacing()).collect();
    let rows: Vec<Row> = (0..grid.node_count())
        .into_par_iter()
        .map(|node| build_row(p, grid, &h, t, n, node, drift))
        .collect::<Result<_, GeneratorError>>()?;

    let mut audit = GeneratorAudit {
        rows: rows.len(),
        min_off_diagonal: f64::INFINITY,
        max_diagonal: f64::NEG_INFINITY,
        central_dx_bound: f64::INFINITY,
        ..Default::default()
    };
    let mut slice = Slice {
        offsets: Vec::with_capacity(rows.len() + 1),
        cols: Vec::new(),
        vals: Vec::new(),
    };
    slice.offsets.push(0);
    for (node, r) in rows.into_iter().enumerate() {
        let row = r.entries;
        let scale = row.iter().fold(0.0f64, |m, e| m.max(e.1.abs()));
        let mut sum = 0.0;
        for &(col, v) in &row {
            sum += v;
            if col == node {
                if v > SIGN_TOL * scale {
                    return Err(GeneratorError::Monotonicity {
                        node,
                        time_index: n,
                        what: "positive diagonal",
                    });
                }
                audit.max_diagonal = audit.max_diagonal.max(v);
            } else {
                if v < -SIGN_TOL * scale {
                    return Err(GeneratorError::Monotonicity {
                        node,
                        time_index: n,
                        what: "negative off-diagonal",
                    });
                }
                audit.min_off_diagonal = audit.min_off_diagonal.min(v.max(0.0));
            }
            slice.cols.push(col);
            slice.vals.push(if col == node { v } else { v.max(0.0) });
        }
        audit.max_row_sum = audit.max_row_sum.max(sum.abs());
        audit.outward_drift_dropped += r.dropped;
        audit.central_drift += r.central;
        audit.upwind_drift += r.upwind;
        audit.central_dx_bound = audit.central_dx_bound.min(r.dx_bound);
        slice.offsets.push(slice.cols.len());
    }
    Ok((slice, audit))
}

/// Combines duplicate columns and appends the diagonal so the row sums to zero.
fn merge(node: usize, mut entries: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    entries.sort_by_key(|e| e.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(entries.len() + 1);
    for (c, v) in entries {
        match out.last_mut() {
            Some(last) if last.0 == c => last.1 += v,
            _ => out.push((c, v)),
        }
    }
    out.retain(|e| e.0 != node && e.1 != 0.0);
    let diag: f64 = -out.iter().map(|e| e.1).sum::<f64>();
    let pos = out.partition_point(|e| e.0 < node);
    out.insert(pos, (node, diag));
    out
}
