use rayon::prelude::*;
use thiserror::Error;

use crate::exprlang::EvalError;
use crate::grid::{GridError, GridSpec, SpaceGrid, StencilMode, TimeGrid};
use crate::problem::SwitchingProblem;

/// Relative tolerance of the build-time moment audit.
const MOMENT_TOL: f64 = 1e-10;
/// Slack on probabilities that are zero up to rounding.
const PROB_EPS: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("grid has dimension {grid} but the problem has state dimension {problem}")]
    Dimension { grid: usize, problem: usize },
    #[error("coefficient evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error(
        "negative transition probability at node {node} (x={x:?}, time index {time_index}); \
         reduce the time step to at most {suggested_dt:.3e} or use the adaptive stencil"
    )]
    NegativeProbability {
        node: usize,
        x: Vec<f64>,
        time_index: usize,
        suggested_dt: f64,
    },
    #[error("local consistency audit failed at node {node} (x={x:?}): {what} error {error:.3e}")]
    Consistency {
        node: usize,
        x: Vec<f64>,
        what: &'static str,
        error: f64,
    },
}

/// Transition stencils of every node for one time step.
#[derive(Debug, Clone)]
struct StencilSlice {
    /// `offsets[node]..offsets[node + 1]` indexes `targets` and `probs`.
    offsets: Vec<usize>,
    targets: Vec<usize>,
    probs: Vec<f64>,
}

/// Summary of how well the stencils reproduce the diffusion's first two moments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConsistencyAudit {
    /// Node-steps whose stencil lies entirely inside the grid.
    pub checked: usize,
    /// Of those, stencils matching mean and covariance exactly.
    pub moment_matched: usize,
    /// Of those, drift-dominated stencils built with upwinding (covariance
    /// carries an extra `|b| h dt` term).
    pub upwinded: usize,
    /// Node-steps whose stencil was folded back at the boundary.
    pub folded: usize,
    /// Largest mean error over moment-matched stencils, divided by `dt`.
    pub max_mean_error: f64,
    /// Largest covariance error over moment-matched stencils, divided by `dt`.
    pub max_cov_error: f64,
    /// Largest numerical diffusion of upwinded stencils, divided by `dt`.
    pub max_upwind_excess: f64,
    /// Widest jump used, in nodes.
    pub max_jump: usize,
}

/// Discrete-time, discrete-space chain locally consistent with the SDE
/// `dX = b dt + sigma dW`.
///
/// Each stencil is a (per-axis) three-point law on `{x - k h, x, x + k h}`
/// with `k >= 1` nodes. Probabilities are chosen so the one-step mean is
/// `b dt` and the one-step covariance is `sigma sigma^T dt`. When that is
/// impossible without negative weights (drift-dominated nodes), the drift is
/// upwinded instead. Mass that would leave the grid is folded back onto the
/// boundary node.
#[derive(Debug, Clone)]
pub struct MarkovChainApprox {
    grid: SpaceGrid,
    times: TimeGrid,
    stencil_mode: StencilMode,
    slices: Vec<StencilSlice>,
    audit: ConsistencyAudit,
    problem_hash: String,
}

struct RawStencil {
    /// Per-axis displacement (in nodes) and probability.
    moves: Vec<([isize; 2], f64)>,
    matched: bool,
}

impl MarkovChainApprox {
    pub fn build(p: &SwitchingProblem, spec: &GridSpec) -> Result<MarkovChainApprox, ChainError> {
        let grid = spec.space.clone();
        if grid.dim() != p.state_dim() {
            return Err(ChainError::Dimension {
                grid: grid.dim(),
                problem: p.state_dim(),
            });
        }
        grid.check_interior(p.x0())?;
        let times = TimeGrid::uniform(p.horizon(), spec.steps.max(1));
        let distinct = if p.diffusion_depends_on_time() {
            times.steps()
        } else {
            1
        };
        let built: Vec<(StencilSlice, ConsistencyAudit)> = (0..distinct)
            .into_par_iter()
            .map(|n| build_slice(p, &grid, &times, n, spec.stencil))
            .collect::<Result<_, ChainError>>()?;

        let mut audit = ConsistencyAudit::default();
        let mut slices = Vec::with_capacity(built.len());
        for (slice, a) in built {
            audit.checked += a.checked;
            audit.moment_matched += a.moment_matched;
            audit.upwinded += a.upwinded;
            audit.folded += a.folded;
            audit.max_mean_error = audit.max_mean_error.max(a.max_mean_error);
            audit.max_cov_error = audit.max_cov_error.max(a.max_cov_error);
            audit.max_upwind_excess = audit.max_upwind_excess.max(a.max_upwind_excess);
            audit.max_jump = audit.max_jump.max(a.max_jump);
            slices.push(slice);
        }
        Ok(MarkovChainApprox {
            grid,
            times,
            stencil_mode: spec.stencil,
            slices,
            audit,
            problem_hash: p.hash().to_string(),
        })
    }

    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }

    pub fn times(&self) -> &TimeGrid {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.steps()
    }

    pub fn stencil_mode(&self) -> StencilMode {
        self.stencil_mode
    }

    pub fn audit(&self) -> &ConsistencyAudit {
        &self.audit
    }

    pub fn problem_hash(&self) -> &str {
        &self.problem_hash
    }

    /// True when one stencil slice serves every time step.
    pub fn is_time_homogeneous(&self) -> bool {
        self.slices.len() == 1
    }

    fn slice(&self, n: usize) -> &StencilSlice {
        &self.slices[if self.slices.len() == 1 { 0 } else { n }]
    }

    /// Transition `(target node, probability)` pairs from `node` over step `n`.
    pub fn stencil(&self, n: usize, node: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = self.slice(n);
        let r = s.offsets[node]..s.offsets[node + 1];
        s.targets[r.clone()].iter().copied().zip(s.probs[r].iter().copied())
    }

    /// `out[node] = E[values(X_{n+1}) | X_n = node]`.
    pub fn expect(&self, n: usize, values: &[f64], out: &mut [f64]) {
        let s = self.slice(n);
        let apply = |(node, o): (usize, &mut f64)| {
            let mut acc = 0.0;
            for k in s.offsets[node]..s.offsets[node + 1] {
                acc += s.probs[k] * values[s.targets[k]];
            }
            *o = acc;
        };
        if out.len() >= 4096 {
            out.par_iter_mut().enumerate().for_each(apply);
        } else {
            out.iter_mut().enumerate().for_each(apply);
        }
    }
}

fn build_slice(
    p: &SwitchingProblem,
    grid: &SpaceGrid,
    times: &TimeGrid,
    n: usize,
    mode: StencilMode,
) -> Result<(StencilSlice, ConsistencyAudit), ChainError> {
    let t = times.times()[n];
    let dt = times.dt(n);
    let dim = grid.dim();
    let h: Vec<f64> = grid.axes().iter().map(|a| a.spacing()).collect();
    let nodes = grid.node_count();
    let mut slice = StencilSlice {
        offsets: Vec::with_capacity(nodes + 1),
        targets: Vec::with_capacity(nodes * 3 * dim),
        probs: Vec::with_capacity(nodes * 3 * dim),
    };
    let mut audit = ConsistencyAudit::default();
    slice.offsets.push(0);

    for node in 0..nodes {
        let x = grid.point(node);
        let b = p.drift(t, &x)?;
        let a = p.covariance(t, &x)?;
        let raw = match dim {
            1 => stencil_1d(b[0], a[0], dt, h[0], mode),
            _ => stencil_2d([b[0], b[1]], [a[0], a[1], a[3]], dt, [h[0], h[1]], mode),
        };
        let Some(raw) = raw else {
            let suggested_dt = (0..dim)
                .map(|k| h[k] * h[k] / (dim as f64 * (a[k * dim + k] + h[k] * b[k].abs()) + f64::MIN_POSITIVE))
                .fold(f64::INFINITY, f64::min);
            return Err(ChainError::NegativeProbability {
                node,
                x,
                time_index: n,
                suggested_dt,
            });
        };

        let idx = grid.multi_index(node);
        let mut folded = false;
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(raw.moves.len());
        let mut mean = [0.0f64; 2];
        let mut second = [[0.0f64; 2]; 2];
        for &(mv, prob) in &raw.moves {
            if prob == 0.0 {
                continue;
            }
            let mut target = [0usize; 2];
            for k in 0..dim {
                let want = idx[k] as isize + mv[k];
                let last = grid.axes()[k].nodes as isize - 1;
                if want < 0 || want > last {
                    folded = true;
                }
                target[k] = want.clamp(0, last) as usize;
                audit.max_jump = audit.max_jump.max(mv[k].unsigned_abs());
            }
            for k in 0..dim {
                let dk = mv[k] as f64 * h[k];
                mean[k] += prob * dk;
                for l in 0..dim {
                    second[k][l] += prob * dk * mv[l] as f64 * h[l];
                }
            }
            let tnode = grid.node_index(target);
            match entries.iter_mut().find(|(n, _)| *n == tnode) {
                Some(e) => e.1 += prob,
                None => entries.push((tnode, prob)),
            }
        }
        entries.sort_by_key(|e| e.0);

        if folded {
            audit.folded += 1;
        } else {
            audit.checked += 1;
            let mut mean_err = 0.0f64;
            let mut cov_err = 0.0f64;
            let mut scale = 1.0f64;
            for k in 0..dim {
                mean_err = mean_err.max((mean[k] - b[k] * dt).abs());
                scale = scale.max(b[k].abs());
                for l in 0..dim {
                    let cov = second[k][l] - mean[k] * mean[l];
                    cov_err = cov_err.max((cov - a[k * dim + l] * dt).abs());
                    scale = scale.max(a[k * dim + l].abs());
                }
            }
            if raw.matched {
                audit.moment_matched += 1;
                let tol = MOMENT_TOL * dt * scale;
                if mean_err > tol {
                    return Err(ChainError::Consistency {
                        node,
                        x,
                        what: "mean",
                        error: mean_err,
                    });
                }
                if cov_err > tol {
                    return Err(ChainError::Consistency {
                        node,
                        x,
                        what: "covariance",
                        error: cov_err,
                    });
                }
                audit.max_mean_error = audit.max_mean_error.max(mean_err / dt);
                audit.max_cov_error = audit.max_cov_error.max(cov_err / dt);
            } else {
                audit.upwinded += 1;
                audit.max_upwind_excess = audit.max_upwind_excess.max(cov_err / dt);
            }
        }
        for (tn, pr) in entries {
            slice.targets.push(tn);
            slice.probs.push(pr);
        }
        slice.offsets.push(slice.targets.len());
    }
    Ok((slice, audit))
}

/// Smallest jump width (in nodes, at least 1) whose length is `>= need`.
fn jump_width(need: f64, h: f64) -> usize {
    let r = need / h;
    let k = (r - 1e-12).ceil();
    if k.is_finite() && k > 1.0 {
        k as usize
    } else {
        1
    }
}

fn all_valid(probs: &[f64]) -> bool {
    probs.iter().all(|&p| p >= -PROB_EPS)
}

fn clean(p: f64) -> f64 {
    p.max(0.0)
}

fn stencil_1d(b: f64, a: f64, dt: f64, h: f64, mode: StencilMode) -> Option<RawStencil> {
    let mu = b * dt;
    let second = a * dt + mu * mu;
    let adaptive = mode == StencilMode::Adaptive;

    let k = if adaptive { jump_width(second.sqrt(), h) } else { 1 };
    let hk = k as f64 * h;
    let r = second / (hk * hk);
    let up = 0.5 * (r + mu / hk);
    let down = 0.5 * (r - mu / hk);
    let stay = 1.0 - up - down;
    if all_valid(&[up, down, stay]) {
        let k = k as isize;
        return Some(RawStencil {
            moves: vec![([-k, 0], clean(down)), ([0, 0], clean(stay)), ([k, 0], clean(up))],
            matched: true,
        });
    }

    let k = if adaptive {
        jump_width(0.5 * (b.abs() * dt + (mu * mu + 4.0 * a * dt).sqrt()), h)
    } else {
        1
    };
    let hk = k as f64 * h;
    let diff = 0.5 * a * dt / (hk * hk);
    let up = diff + b.max(0.0) * dt / hk;
    let down = diff + (-b).max(0.0) * dt / hk;
    let stay = 1.0 - up - down;
    if all_valid(&[up, down, stay]) {
        let k = k as isize;
        return Some(RawStencil {
            moves: vec![([-k, 0], clean(down)), ([0, 0], clean(stay)), ([k, 0], clean(up))],
            matched: false,
        });
    }
    None
}

/// `a = [a11, a12, a22]`.
fn stencil_2d(b: [f64; 2], a: [f64; 3], dt: f64, h: [f64; 2], mode: StencilMode) -> Option<RawStencil> {
    let adaptive = mode == StencilMode::Adaptive;
    let mu = [b[0] * dt, b[1] * dt];
    let second = [a[0] * dt + mu[0] * mu[0], a[2] * dt + mu[1] * mu[1]];
    let cross = a[1] * dt + mu[0] * mu[1];

    // Moment-matched nine-point law.
    let kx = if adaptive { jump_width((2.0 * second[0]).sqrt(), h[0]) } else { 1 };
    let ky = if adaptive { jump_width((2.0 * second[1]).sqrt(), h[1]) } else { 1 };
    let hk = [kx as f64 * h[0], ky as f64 * h[1]];
    let q = cross.abs() / (2.0 * hk[0] * hk[1]);
    let sx = second[0] / (hk[0] * hk[0]) - 2.0 * q;
    let sy = second[1] / (hk[1] * hk[1]) - 2.0 * q;
    let px = [0.5 * (sx + mu[0] / hk[0]), 0.5 * (sx - mu[0] / hk[0])];
    let py = [0.5 * (sy + mu[1] / hk[1]), 0.5 * (sy - mu[1] / hk[1])];
    let stay = 1.0 - px[0] - px[1] - py[0] - py[1] - 4.0 * q;
    if all_valid(&[px[0], px[1], py[0], py[1], q, stay]) {
        return Some(RawStencil {
            moves: moves_2d(kx, ky, px, py, q, cross >= 0.0, stay),
            matched: true,
        });
    }

    // Upwinded drift, diagonal moves for the cross term.
    let width = |bk: f64, akk: f64, hk: f64| {
        if adaptive {
            jump_width(bk.abs() * dt + (bk * bk * dt * dt + 2.0 * akk * dt).sqrt(), hk)
        } else {
            1
        }
    };
    let kx = width(b[0], a[0], h[0]);
    let ky = width(b[1], a[2], h[1]);
    let hk = [kx as f64 * h[0], ky as f64 * h[1]];
    let q = a[1].abs() * dt / (2.0 * hk[0] * hk[1]);
    let dx = 0.5 * a[0] * dt / (hk[0] * hk[0]) - q;
    let dy = 0.5 * a[2] * dt / (hk[1] * hk[1]) - q;
    let px = [dx + b[0].max(0.0) * dt / hk[0], dx + (-b[0]).max(0.0) * dt / hk[0]];
    let py = [dy + b[1].max(0.0) * dt / hk[1], dy + (-b[1]).max(0.0) * dt / hk[1]];
    let stay = 1.0 - px[0] - px[1] - py[0] - py[1] - 4.0 * q;
    if all_valid(&[px[0], px[1], py[0], py[1], q, stay]) {
        return Some(RawStencil {
            moves: moves_2d(kx, ky, px, py, q, a[1] >= 0.0, stay),
            matched: false,
        });
    }
    None
}

fn moves_2d(kx: usize, ky: usize, px: [f64; 2], py: [f64; 2], q: f64, positive: bool, stay: f64) -> Vec<([isize; 2], f64)> {
    let (kx, ky) = (kx as isize, ky as isize);
    let mut v = vec![
        ([0, 0], clean(stay)),
        ([kx, 0], clean(px[0])),
        ([-kx, 0], clean(px[1])),
        ([0, ky], clean(py[0])),
        ([0, -ky], clean(py[1])),
    ];
    if positive {
        v.push(([kx, ky], clean(q)));
        v.push(([-kx, -ky], clean(q)));
    } else {
        v.push(([kx, -ky], clean(q)));
        v.push(([-kx, ky], clean(q)));
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;
    use crate::problem::ProblemSource;

    fn chain_1d(drift: &str, vol: &str, lo: f64, hi: f64, nodes: usize, steps: usize, mode: StencilMode) -> Result<MarkovChainApprox, ChainError> {
        let p = ProblemSource::one_dim(1.0, drift, vol, &["0"], &[&["0"]], 0.5 * (lo + hi))
            .compile()
            .unwrap();
        let spec = GridSpec::new(vec![Axis::new(lo, hi, nodes)], steps).unwrap().with_stencil(mode);
        MarkovChainApprox::build(&p, &spec)
    }

    #[test]
    fn brownian_symmetric_stencil() {
        // dt = 1/16, h = 1/4 -> dt = h^2.
        let c = chain_1d("0", "1", -2.0, 2.0, 17, 16, StencilMode::Adjacent).unwrap();
        let s: Vec<_> = c.stencil(0, 8).collect();
        assert_eq!(s, vec![(7, 0.5), (9, 0.5)]);
    }

    #[test]
    fn pure_drift_moves_up() {
        // dt = h = 1/10.
        let c = chain_1d("1", "0", 0.0, 2.0, 21, 10, StencilMode::Adjacent).unwrap();
        for (target, p) in c.stencil(0, 5) {
            let want = if target == 6 { 1.0 } else { 0.0 };
            assert!((p - want).abs() < 1e-12, "target {target}: {p}");
        }
    }

    #[test]
    fn stencils_are_probability_vectors() {
        let c = chain_1d("0.05*x1", "0.2*x1", 0.0, 10.0, 101, 40, StencilMode::Adaptive).unwrap();
        for node in 0..101 {
            let total: f64 = c.stencil(0, node).map(|(_, p)| {
                assert!((0.0..=1.0).contains(&p));
                p
            }).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gbm_moments_match_away_from_zero() {
        let c = chain_1d("0.05*x1", "0.2*x1", 1.0, 12.0, 111, 50, StencilMode::Adaptive).unwrap();
        let a = c.audit();
        assert_eq!(a.upwinded, 0);
        assert_eq!(a.checked, a.moment_matched);
        assert!(a.checked > 90);
        assert!(a.max_mean_error <= 1e-10 && a.max_cov_error <= 1e-10, "{a:?}");
    }

    #[test]
    fn adjacent_mode_rejects_large_steps() {
        let err = chain_1d("0", "1", -1.0, 1.0, 41, 10, StencilMode::Adjacent).unwrap_err();
        match err {
            ChainError::NegativeProbability { suggested_dt, .. } => {
                assert!((suggested_dt - 0.05f64.powi(2)).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        // The adaptive stencil widens the jump instead.
        let c = chain_1d("0", "1", -1.0, 1.0, 41, 10, StencilMode::Adaptive).unwrap();
        assert!(c.audit().max_jump >= 7);
    }

    #[test]
    fn drift_dominated_nodes_fall_back_to_upwind() {
        let c = chain_1d("1", "0.01", 0.0, 1.0, 11, 100, StencilMode::Adjacent).unwrap();
        assert!(c.audit().upwinded > 0);
        for node in 1..10 {
            for (_, p) in c.stencil(0, node) {
                assert!(p >= 0.0);
            }
        }
    }

    #[test]
    fn two_dimensional_correlated_moments() {
        let src = ProblemSource {
            horizon: 1.0,
            state_dim: 2,
            brownian_dim: 2,
            drift: vec!["0.1".into(), "-0.2".into()],
            vol: vec![vec!["1".into(), "0".into()], vec!["0.3".into(), "0.8".into()]],
            profit: vec!["0".into()],
            cost: vec![vec!["0".into()]],
            initial_mode: 0,
            x0: vec![0.0, 0.0],
            neg_cost_bound: 0,
        };
        let p = src.compile().unwrap();
        let spec = GridSpec::new(vec![Axis::new(-3.0, 3.0, 31), Axis::new(-3.0, 3.0, 31)], 40).unwrap();
        let c = MarkovChainApprox::build(&p, &spec).unwrap();
        let a = c.audit();
        assert!(a.moment_matched > 0, "{a:?}");
        assert!(a.max_cov_error <= 1e-10);
        assert!(c.is_time_homogeneous());
    }
}
