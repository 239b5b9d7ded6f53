use rayon::prelude::*;

use super::SwitchingProblem;
use crate::exprlang::EvalError;
use crate::grid::{SpaceGrid, TimeGrid};

/// Profit rates and switching costs evaluated once on every (time, node) pair.
#[derive(Debug, Clone)]
pub struct ProblemTables {
    modes: usize,
    nodes: usize,
    slices: usize,
    /// `[slice][node][mode]`
    psi: Vec<f64>,
    /// `[slice][node][from][to]`, zero on the diagonal.
    cost: Vec<f64>,
}

impl ProblemTables {
    pub fn sample(
        p: &SwitchingProblem,
        space: &SpaceGrid,
        times: &TimeGrid,
    ) -> Result<ProblemTables, EvalError> {
        let m = p.mode_count();
        let nodes = space.node_count();
        let points = space.points();
        let per_slice: Vec<(Vec<f64>, Vec<f64>)> = times
            .times()
            .par_iter()
            .map(|&t| {
                let mut psi = Vec::with_capacity(nodes * m);
                let mut cost = Vec::with_capacity(nodes * m * m);
                for x in &points {
                    for i in 0..m {
                        psi.push(p.profit_rate(i, t, x)?);
                    }
                    for i in 0..m {
                        for j in 0..m {
                            cost.push(p.switch_cost(i, j, t, x)?);
                        }
                    }
                }
                Ok((psi, cost))
            })
            .collect::<Result<_, EvalError>>()?;
        let slices = per_slice.len();
        let mut psi = Vec::with_capacity(slices * nodes * m);
        let mut cost = Vec::with_capacity(slices * nodes * m * m);
        for (a, b) in per_slice {
            psi.extend(a);
            cost.extend(b);
        }
        Ok(ProblemTables {
            modes: m,
            nodes,
            slices,
            psi,
            cost,
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    #[inline]
    pub fn psi(&self, n: usize, node: usize, i: usize) -> f64 {
        self.psi[(n * self.nodes + node) * self.modes + i]
    }

    #[inline]
    pub fn cost(&self, n: usize, node: usize, i: usize, j: usize) -> f64 {
        let m = self.modes;
        self.cost[((n * self.nodes + node) * m + i) * m + j]
    }

    /// Costs out of every mode at one (slice, node), row-major `m x m`.
    #[inline]
    pub fn cost_matrix(&self, n: usize, node: usize) -> &[f64] {
        let mm = self.modes * self.modes;
        let start = (n * self.nodes + node) * mm;
        &self.cost[start..start + mm]
    }

    /// Largest `|psi_i|` over every sample.
    pub fn psi_sup(&self) -> f64 {
        self.psi.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}
