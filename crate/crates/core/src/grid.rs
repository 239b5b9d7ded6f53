//! Uniform space grids (1 or 2 dimensions) and time grids shared by the
//! lattice and finite-difference engines.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("state dimension {0} is not supported on a grid (1 or 2 only)")]
    Dimension(usize),
    #[error("axis {axis}: need at least 3 nodes and finite lo < hi (got lo={lo}, hi={hi}, nodes={nodes})")]
    Axis {
        axis: usize,
        lo: f64,
        hi: f64,
        nodes: usize,
    },
    #[error("initial state coordinate {axis} = {x} is not strictly inside the grid [{lo}, {hi}]")]
    InitialStateOutside { axis: usize, x: f64, lo: f64, hi: f64 },
    #[error("time grid must start at 0, end at the horizon and be strictly increasing")]
    Times,
}

/// One uniformly spaced axis with `nodes` points from `lo` to `hi` inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, nodes: usize) -> Axis {
        Axis { lo, hi, nodes }
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.nodes - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        if i + 1 == self.nodes {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    /// Index of the nearest node, clamped to the axis.
    pub fn nearest(&self, x: f64) -> usize {
        let r = ((x - self.lo) / self.spacing()).round();
        if r <= 0.0 || r.is_nan() {
            0
        } else {
            (r as usize).min(self.nodes - 1)
        }
    }

    /// Same bounds, half the spacing.
    pub fn refined(&self) -> Axis {
        Axis::new(self.lo, self.hi, 2 * (self.nodes - 1) + 1)
    }
}

/// Tensor grid; node index runs over the first axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceGrid {
    axes: Vec<Axis>,
}

impl SpaceGrid {
    pub fn new(axes: Vec<Axis>) -> Result<SpaceGrid, GridError> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(GridError::Dimension(axes.len()));
        }
        for (k, a) in axes.iter().enumerate() {
            if a.nodes < 3 || !a.lo.is_finite() || !a.hi.is_finite() || a.lo >= a.hi {
                return Err(GridError::Axis {
                    axis: k,
                    lo: a.lo,
                    hi: a.hi,
                    nodes: a.nodes,
                });
            }
        }
        Ok(SpaceGrid { axes })
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.nodes).product()
    }

    /// Per-axis indices of a node.
    pub fn multi_index(&self, node: usize) -> [usize; 2] {
        let n0 = self.axes[0].nodes;
        [node % n0, node / n0]
    }

    pub fn node_index(&self, idx: [usize; 2]) -> usize {
        idx[0] + self.axes[0].nodes * idx[1]
    }

    /// Coordinates of `node` (length = dim).
    pub fn point(&self, node: usize) -> Vec<f64> {
        let idx = self.multi_index(node);
        self.axes
            .iter()
            .enumerate()
            .map(|(k, a)| a.coord(idx[k]))
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.node_count()).map(|n| self.point(n)).collect()
    }

    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut idx = [0usize; 2];
        for (k, a) in self.axes.iter().enumerate() {
            idx[k] = a.nearest(x[k]);
        }
        self.node_index(idx)
    }

    /// True if the node lies on the boundary along axis `k`.
    pub fn on_boundary(&self, node: usize, k: usize) -> bool {
        let i = self.multi_index(node)[k];
        i == 0 || i + 1 == self.axes[k].nodes
    }

    pub fn is_interior(&self, node: usize) -> bool {
        (0..self.dim()).all(|k| !self.on_boundary(node, k))
    }

    /// Checks that `x0` lies strictly inside the grid.
    pub fn check_interior(&self, x0: &[f64]) -> Result<(), GridError> {
        for (k, a) in self.axes.iter().enumerate() {
            let x = x0[k];
            if !(x > a.lo && x < a.hi) {
                return Err(GridError::InitialStateOutside {
                    axis: k,
                    x,
                    lo: a.lo,
                    hi: a.hi,
                });
            }
        }
        Ok(())
    }

    pub fn refined(&self) -> SpaceGrid {
        SpaceGrid {
            axes: self.axes.iter().map(Axis::refined).collect(),
        }
    }

    /// Multilinear interpolation of nodal `values` at `x` (clamped to the grid).
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let mut base = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for (k, a) in self.axes.iter().enumerate() {
            let s = ((x[k] - a.lo) / a.spacing()).clamp(0.0, (a.nodes - 1) as f64);
            let i = (s.floor() as usize).min(a.nodes - 2);
            base[k] = i;
            frac[k] = s - i as f64;
        }
        match self.dim() {
            1 => values[base[0]] * (1.0 - frac[0]) + values[base[0] + 1] * frac[0],
            _ => {
                let at = |i: usize, j: usize| values[self.node_index([base[0] + i, base[1] + j])];
                let (fx, fy) = (frac[0], frac[1]);
                (at(0, 0) * (1.0 - fx) + at(1, 0) * fx) * (1.0 - fy)
                    + (at(0, 1) * (1.0 - fx) + at(1, 1) * fx) * fy
            }
        }
    }
}

impl fmt::Display for SpaceGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, a) in self.axes.iter().enumerate() {
            if k > 0 {
                f.write_str(";")?;
            }
            write!(f, "axis{}={:?}:{:?}:{}", k + 1, a.lo, a.hi, a.nodes)?;
        }
        Ok(())
    }
}

/// Strictly increasing decision/time nodes from 0 to the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(horizon: f64, steps: usize) -> TimeGrid {
        let times = (0..=steps)
            .map(|n| {
                if n == steps {
                    horizon
                } else {
                    horizon * n as f64 / steps as f64
                }
            })
            .collect();
        TimeGrid { times }
    }

    pub fn from_times(times: Vec<f64>, horizon: f64) -> Result<TimeGrid, GridError> {
        let ok = times.len() >= 2
            && times[0] == 0.0
            && *times.last().unwrap() == horizon
            && times.windows(2).all(|w| w[1] > w[0]);
        if ok {
            Ok(TimeGrid { times })
        } else {
            Err(GridError::Times)
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of steps N (there are N + 1 times).
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self, n: usize) -> f64 {
        self.times[n + 1] - self.times[n]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn refined(&self) -> TimeGrid {
        let mut times = Vec::with_capacity(2 * self.times.len() - 1);
        for w in self.times.windows(2) {
            times.push(w[0]);
            times.push(0.5 * (w[0] + w[1]));
        }
        times.push(self.horizon());
        TimeGrid { times }
    }
}

/// How wide a Markov-chain transition stencil may be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StencilMode {
    /// Jumps span as many nodes as needed to keep probabilities valid.
    #[default]
    Adaptive,
    /// Nearest neighbours only; the time step must satisfy the explicit bound.
    Adjacent,
}

impl StencilMode {
    pub fn name(self) -> &'static str {
        match self {
            StencilMode::Adaptive => "adaptive",
            StencilMode::Adjacent => "adjacent",
        }
    }

    pub fn from_name(s: &str) -> Option<StencilMode> {
        match s {
            "adaptive" => Some(StencilMode::Adaptive),
            "adjacent" => Some(StencilMode::Adjacent),
            _ => None,
        }
    }
}

/// Space grid, uniform time steps and stencil policy for a solve.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub space: SpaceGrid,
    pub steps: usize,
    pub stencil: StencilMode,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>, steps: usize) -> Result<GridSpec, GridError> {
        Ok(GridSpec {
            space: SpaceGrid::new(axes)?,
            steps,
            stencil: StencilMode::default(),
        })
    }

    pub fn with_stencil(mut self, stencil: StencilMode) -> GridSpec {
        self.stencil = stencil;
        self
    }

    /// Halves both the time step and the spacing.
    pub fn refined(&self) -> GridSpec {
        GridSpec {
            space: self.space.refined(),
            steps: 2 * self.steps,
            stencil: self.stencil,
        }
    }
}
