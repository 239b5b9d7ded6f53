//! Lattice solvers against an exhaustive strategy enumeration on tiny grids.

use proptest::prelude::*;
use switchopt_core::lattice::{solve_fixed_point, solve_n_switch, solve_zero_switch, FixedPointOptions, LatticeError};
use switchopt_core::problem::ProblemTables;
use switchopt_core::{Axis, GridSpec, MarkovChainApprox, ProblemSource, SwitchingProblem};

/// Best expected payoff from `(n, node, mode)` over every strategy, found by
/// walking the full tree of chain outcomes. At each decision time every
/// sequence of up to `m` instantaneous switches is tried (revisits included);
/// `budget` caps the total number of switches.
fn enumerate(p: &SwitchingProblem, chain: &MarkovChainApprox, n: usize, node: usize, mode: usize, budget: usize) -> f64 {
    if n == chain.steps() {
        return 0.0;
    }
    let m = p.mode_count();
    let t = chain.times().times()[n];
    let x = chain.grid().point(node);
    let dt = chain.times().dt(n);
    let mut best = f64::NEG_INFINITY;
    let mut chains: Vec<(usize, f64, usize)> = vec![(mode, 0.0, 0)];
    let mut frontier = chains.clone();
    for _ in 0..m {
        let mut next = Vec::new();
        for &(at, paid, used) in &frontier {
            if used == budget {
                continue;
            }
            for j in (0..m).filter(|&j| j != at) {
                next.push((j, paid + p.switch_cost(at, j, t, &x).unwrap(), used + 1));
            }
        }
        chains.extend(next.iter().cloned());
        frontier = next;
    }
    for (end, paid, used) in chains {
        let mut v = p.profit_rate(end, t, &x).unwrap() * dt - paid;
        for (target, prob) in chain.stencil(n, node) {
            v += prob * enumerate(p, chain, n + 1, target, end, budget - used);
        }
        best = best.max(v);
    }
    best
}

fn one_dim(profit: &[&str], cost: &[&[&str]], drift: &str, vol: &str) -> SwitchingProblem {
    ProblemSource::one_dim(1.0, drift, vol, profit, cost, 0.5)
        .with_neg_cost_bound(2)
        .compile()
        .unwrap()
}

fn tiny_chain(p: &SwitchingProblem, nodes: usize, steps: usize) -> MarkovChainApprox {
    let spec = GridSpec::new(vec![Axis::new(0.0, 1.0, nodes)], steps).unwrap();
    MarkovChainApprox::build(p, &spec).unwrap()
}

fn coarse(p: &SwitchingProblem) -> MarkovChainApprox {
    tiny_chain(p, 5, 4)
}

#[test]
fn level_one_without_profitable_switch() {
    let p = one_dim(&["0", "1"], &[&["0", "10"], &["10", "0"]], "0", "0.3");
    let chain = coarse(&p);
    let (levels, _) = solve_n_switch(&chain, &p, 1).unwrap();
    for node in 0..5 {
        assert!((levels[1].get(0, 0, node) - 0.0).abs() < 1e-12);
        assert!((levels[1].get(1, 0, node) - 1.0).abs() < 1e-12);
        assert!((levels[1].get(0, 0, node) - enumerate(&p, &chain, 0, node, 0, 1)).abs() < 1e-12);
    }
}

#[test]
fn level_one_with_cheap_switch() {
    let p = one_dim(&["0", "1"], &[&["0", "0.1"], &["10", "0"]], "0", "0.3");
    let chain = coarse(&p);
    let (levels, _) = solve_n_switch(&chain, &p, 1).unwrap();
    for node in 0..5 {
        assert!((levels[1].get(0, 0, node) - 0.9).abs() < 1e-12);
        assert!((levels[1].get(0, 0, node) - enumerate(&p, &chain, 0, node, 0, 1)).abs() < 1e-12);
    }
}

#[test]
fn fixed_point_without_profitable_switch() {
    let p = one_dim(&["1", "2"], &[&["0", "10"], &["10", "0"]], "0.1*x1", "0.3");
    let chain = coarse(&p);
    let (v, _) = solve_fixed_point(&chain, &p, FixedPointOptions { verify: true, ..Default::default() }).unwrap();
    for node in 0..5 {
        assert!((v.get(0, 0, node) - 1.0).abs() < 1e-12);
        assert!((v.get(1, 0, node) - 2.0).abs() < 1e-12);
    }
}

#[test]
fn negative_cost_is_collected_once() {
    let p = one_dim(&["0", "0"], &[&["0", "-(1 - t)*0.5"], &["2", "0"]], "0", "0.3");
    let chain = coarse(&p);
    let (v, _) = solve_fixed_point(&chain, &p, FixedPointOptions::default()).unwrap();
    for node in 0..5 {
        assert!((v.get(0, 0, node) - 0.5).abs() < 1e-12);
        assert!(v.get(1, 0, node).abs() < 1e-12);
        assert!((v.get(0, 0, node) - enumerate(&p, &chain, 0, node, 0, 3)).abs() < 1e-10);
        assert!((v.get(1, 0, node) - enumerate(&p, &chain, 0, node, 1, 3)).abs() < 1e-10);
    }
}

#[test]
fn single_mode_fixed_point_is_zero_switch() {
    let p = one_dim(&["x1 - 0.3*t"], &[&["0"]], "0.2", "0.4");
    let chain = tiny_chain(&p, 21, 30);
    let (v, _) = solve_fixed_point(&chain, &p, FixedPointOptions::default()).unwrap();
    let z = solve_zero_switch(&chain, &p).unwrap();
    assert_eq!(v.values(), z.values());
}

#[test]
fn zero_switch_closed_forms() {
    let p = one_dim(&["1.25", "0"], &[&["0", "1"], &["1", "0"]], "0.05*x1", "0.2*x1");
    let chain = tiny_chain(&p, 41, 50);
    let z = solve_zero_switch(&chain, &p).unwrap();
    for node in 0..41 {
        assert!((z.get(0, 0, node) - 1.25).abs() < 1e-12);
        assert_eq!(z.get(1, 0, node), 0.0);
    }

    // E int_0^T X ds = x0 T for a driftless state.
    let p = ProblemSource::one_dim(1.0, "0", "1", &["x1"], &[&["0"]], 0.0).compile().unwrap();
    let spec = GridSpec::new(vec![Axis::new(-8.0, 8.0, 161)], 100).unwrap();
    let chain = MarkovChainApprox::build(&p, &spec).unwrap();
    let z = solve_zero_switch(&chain, &p).unwrap();
    for node in 60..=100 {
        let x = chain.grid().point(node)[0];
        assert!((z.get(0, 0, node) - x).abs() < 1e-6, "x={x}: {}", z.get(0, 0, node));
    }
}

#[test]
fn symmetric_modes_have_equal_values() {
    let p = one_dim(&["x1 - 0.5", "x1 - 0.5"], &[&["0", "0.2"], &["0.2", "0"]], "0.1", "0.3");
    let chain = tiny_chain(&p, 31, 40);
    let (levels, _) = solve_n_switch(&chain, &p, 3).unwrap();
    for v in &levels {
        for n in 0..=40 {
            for node in 0..31 {
                assert!((v.get(0, n, node) - v.get(1, n, node)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn profitable_loop_is_reported() {
    // Forced through without validation: the round trip 1 -> 2 -> 1 pays 0.1.
    let p = one_dim(&["0", "0"], &[&["0", "-0.3"], &["0.2", "0"]], "0", "0.3");
    let chain = coarse(&p);
    let err = solve_fixed_point(&chain, &p, FixedPointOptions::default()).unwrap_err();
    assert!(matches!(err, LatticeError::SwitchingLoop { .. }));
}

#[test]
fn level_budget_exhaustion_is_reported() {
    let p = one_dim(&["x1", "1 - x1"], &[&["0", "0.01"], &["0.01", "0"]], "0", "0.5");
    let chain = tiny_chain(&p, 21, 100);
    let opts = FixedPointOptions {
        verify: true,
        max_outer: 1,
        tol: 1e-12,
    };
    match solve_fixed_point(&chain, &p, opts) {
        Err(LatticeError::NotConverged { trace }) => assert_eq!(trace.entries.len(), 2),
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

/// Random valid 1D problems on 2 or 3 modes, with at most one negative cost
/// that vanishes at the horizon.
fn small_problem() -> impl Strategy<Value = SwitchingProblem> {
    (
        2usize..=3,
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -0.5f64..0.5), 3),
        proptest::collection::vec(0.6f64..1.5, 9),
        0.0f64..0.5,
        any::<bool>(),
        -0.3f64..0.3,
        0.05f64..0.6,
    )
        .prop_map(|(m, psi, costs, neg, use_neg, drift, vol)| {
            let profit: Vec<String> = psi[..m]
                .iter()
                .map(|(a, b, c)| format!("{a:?} + {b:?}*x1 + {c:?}*t"))
                .collect();
            let mut cost = vec![vec!["0".to_string(); m]; m];
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        cost[i][j] = format!("{:?}", costs[i * 3 + j]);
                    }
                }
            }
            if use_neg {
                cost[0][1] = format!("-{neg:?}*(1 - t)");
            }
            let src = ProblemSource {
                horizon: 1.0,
                state_dim: 1,
                brownian_dim: 1,
                drift: vec![format!("{drift:?}")],
                vol: vec![vec![format!("{vol:?}")]],
                profit,
                cost,
                initial_mode: 0,
                x0: vec![0.5],
                neg_cost_bound: 1,
            };
            src.compile().unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fixed_point_matches_enumeration(p in small_problem(), steps in 2usize..=3) {
        let chain = tiny_chain(&p, 5, steps);
        let (v, _) = solve_fixed_point(&chain, &p, FixedPointOptions { verify: true, ..Default::default() }).unwrap();
        for node in 0..5 {
            for i in 0..p.mode_count() {
                let want = enumerate(&p, &chain, 0, node, i, usize::MAX / 2);
                prop_assert!((v.get(i, 0, node) - want).abs() < 1e-10, "mode {} node {}: {} vs {}", i, node, v.get(i, 0, node), want);
            }
        }
    }

    #[test]
    fn each_level_matches_budgeted_enumeration(p in small_problem()) {
        let chain = tiny_chain(&p, 5, 3);
        let (levels, _) = solve_n_switch(&chain, &p, 3).unwrap();
        for (l, v) in levels.iter().enumerate() {
            for node in [0, 2, 4] {
                let want = enumerate(&p, &chain, 0, node, 0, l);
                prop_assert!((v.get(0, 0, node) - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn levels_increase_and_respect_obstacles(p in small_problem()) {
        let chain = tiny_chain(&p, 25, 40);
        let (levels, trace) = solve_n_switch(&chain, &p, 6).unwrap();
        for w in levels.windows(2) {
            prop_assert!(w[1].min_increment_over(&w[0]) >= -1e-12);
        }
        prop_assert!(trace.min_increment() >= -1e-12);
        for v in &levels {
            prop_assert!(v.terminal_is_zero());
        }
        let (fp, _) = solve_fixed_point(&chain, &p, FixedPointOptions { verify: true, ..Default::default() }).unwrap();
        let tables = ProblemTables::sample(&p, chain.grid(), chain.times()).unwrap();
        prop_assert!(fp.obstacle_excess(&tables) <= 1e-9);
        prop_assert!(fp.terminal_is_zero());
        for v in &levels {
            prop_assert!(fp.min_increment_over(v) >= -1e-12);
        }
    }

    #[test]
    fn levels_stay_below_the_profit_and_subsidy_bound(p in small_problem()) {
        let chain = tiny_chain(&p, 25, 40);
        let (levels, _) = solve_n_switch(&chain, &p, 5).unwrap();
        let tables = ProblemTables::sample(&p, chain.grid(), chain.times()).unwrap();
        let m = p.mode_count();
        let nodes = chain.grid().node_count();
        // Backward expectation of max_i |psi_i|.
        let mut bound = vec![0.0; nodes];
        let mut buf = vec![0.0; nodes];
        for n in (0..chain.steps()).rev() {
            chain.expect(n, &bound, &mut buf);
            for node in 0..nodes {
                let top = (0..m).map(|i| tables.psi(n, node, i).abs()).fold(0.0, f64::max);
                bound[node] = top * chain.times().dt(n) + buf[node];
            }
        }
        let mut subsidy: f64 = 0.0;
        for n in 0..=chain.steps() {
            for node in 0..nodes {
                for i in 0..m {
                    for j in 0..m {
                        let g = tables.cost(n, node, i, j);
                        if g < 0.0 {
                            subsidy = subsidy.max(-g);
                        }
                    }
                }
            }
        }
        let extra = p.neg_cost_bound() as f64 * subsidy;
        for v in &levels {
            for node in 0..nodes {
                for i in 0..m {
                    prop_assert!(v.get(i, 0, node) <= bound[node] + extra + 1e-12);
                }
            }
        }
    }
}
