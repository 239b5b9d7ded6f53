use proptest::prelude::*;
use switchopt_core::pde::{assemble, solve_system, solve_with};
use switchopt_core::problem::ProblemTables;
use switchopt_core::{Axis, ProblemSource, SpaceGrid, SwitchingProblem, TimeGrid, ValueField};

fn grid(nodes: usize) -> SpaceGrid {
    SpaceGrid::new(vec![Axis::new(0.0, 4.0, nodes)]).unwrap()
}

fn problem(profit: &[String], cost: &[&[&str]]) -> SwitchingProblem {
    let profit: Vec<&str> = profit.iter().map(String::as_str).collect();
    ProblemSource::one_dim(1.0, "0.1*(2 - x1)", "0.3*sqrt(x1 + 0.1)", &profit, cost, 2.0)
        .with_neg_cost_bound(1)
        .compile()
        .unwrap()
}

fn solve(p: &SwitchingProblem, nodes: usize, steps: usize) -> ValueField {
    solve_system(p, &grid(nodes), &TimeGrid::uniform(p.horizon(), steps)).unwrap().0
}

/// Scaled residual of the continuation equation at `(i, n, node)`.
fn continuation_residual(p: &SwitchingProblem, v: &ValueField, tables: &ProblemTables, i: usize, n: usize, node: usize) -> f64 {
    let times = v.times().clone();
    let gen = assemble(p, v.grid(), &times).unwrap();
    let dt = times.dt(n);
    let av: f64 = gen.row(n, node).map(|(c, w)| w * v.get(i, n, c)).sum();
    (v.get(i, n, node) - v.get(i, n + 1, node)) / dt - av - tables.psi(n, node, i)
}

#[test]
fn constant_profit_single_mode() {
    let p = problem(&["0.75".into()], &[&["0"]]);
    let v = solve(&p, 41, 50);
    for node in 0..41 {
        assert!((v.get(0, 0, node) - 0.75).abs() < 1e-8);
    }
}

#[test]
fn constant_profits_with_prohibitive_costs() {
    let p = problem(&["1".into(), "2".into()], &[&["0", "10"], &["10", "0"]]);
    let v = solve(&p, 41, 50);
    for node in 0..41 {
        assert!((v.get(0, 0, node) - 1.0).abs() < 1e-8);
        assert!((v.get(1, 0, node) - 2.0).abs() < 1e-8);
    }
}

#[test]
fn negative_cost_example_on_the_pde() {
    let p = problem(&["0".into(), "0".into()], &[&["0", "-(1 - t)*0.5"], &["2", "0"]]);
    let v = solve(&p, 21, 20);
    for node in 0..21 {
        assert!((v.get(0, 0, node) - 0.5).abs() < 1e-8);
        assert!(v.get(1, 0, node).abs() < 1e-8);
    }
}

#[test]
fn time_dependent_coefficients_are_resampled() {
    let p = ProblemSource::one_dim(1.0, "0.2*t", "0.3 + 0.1*t", &["x1", "2 - x1"], &[&["0", "0.2"], &["0.2", "0"]], 2.0)
        .compile()
        .unwrap();
    let times = TimeGrid::uniform(1.0, 40);
    let gen = assemble(&p, &grid(41), &times).unwrap();
    assert!(!gen.is_time_homogeneous());
    let tables = ProblemTables::sample(&p, &grid(41), &times).unwrap();
    let (v, log) = solve_with(&p, &gen, &tables, &times).unwrap();
    assert!(v.obstacle_excess(&tables) <= 1e-8);
    assert_eq!(log.iterations.len(), 40);
}

fn profits() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec((-1.0f64..1.0, -0.5f64..0.5), 2)
        .prop_map(|v| v.iter().map(|(a, b)| format!("{a:?} + {b:?}*x1")).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn raising_a_profit_never_lowers_any_value(psi in profits(), g in 0.05f64..1.0, which in 0usize..2, bump in prop_oneof![Just(0.1), Just(1.0)]) {
        let gs = format!("{g:?}");
        let cost: [&[&str]; 2] = [&["0", &gs], &[&gs, "0"]];
        let base = solve(&problem(&psi, &cost), 31, 30);
        let mut raised = psi.clone();
        raised[which] = format!("{} + {bump:?}", raised[which]);
        let up = solve(&problem(&raised, &cost), 31, 30);
        prop_assert!(up.min_increment_over(&base) >= -1e-10);
    }

    #[test]
    fn solution_is_feasible_and_complementary(psi in profits(), g12 in -0.4f64..1.0, g21 in 0.5f64..1.0) {
        let a = if g12 < 0.0 { format!("{g12:?}*(1 - t)") } else { format!("{g12:?}") };
        let b = format!("{g21:?}");
        let p = problem(&psi, &[&["0", &a], &[&b, "0"]]);
        let v = solve(&p, 31, 30);
        let tables = ProblemTables::sample(&p, v.grid(), v.times()).unwrap();
        prop_assert!(v.terminal_is_zero());
        prop_assert!(v.obstacle_excess(&tables) <= 1e-8);
        let scale = 1.0 + tables.psi_sup();
        for n in 0..v.steps() {
            for node in 0..v.grid().node_count() {
                for i in 0..2 {
                    let j = 1 - i;
                    let gap = v.get(i, n, node) - (-tables.cost(n, node, i, j) + v.get(j, n, node));
                    let res = continuation_residual(&p, &v, &tables, i, n, node) / scale;
                    prop_assert!(gap.abs() <= 1e-6 || res.abs() <= 1e-6, "gap {} res {}", gap, res);
                    prop_assert!(res >= -1e-6);
                }
            }
        }
    }

    #[test]
    fn mirrored_modes_give_mirrored_values(c in 0.05f64..0.8, slope in 0.1f64..1.0) {
        let p = ProblemSource::one_dim(
            1.0, "0", "0.4",
            &[&format!("{slope:?}*(x1 - 2)"), &format!("{slope:?}*(2 - x1)")],
            &[&["0", &format!("{c:?}")], &[&format!("{c:?}"), "0"]],
            2.0,
        ).compile().unwrap();
        let v = solve(&p, 41, 40);
        for n in 0..=40 {
            for node in 0..41 {
                prop_assert!((v.get(0, n, node) - v.get(1, n, 40 - node)).abs() < 1e-10);
            }
        }
    }
}
