//! Acceptance criteria A1-A10, one PASS/FAIL line each.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use switchopt_cli::artifacts::key_values;
use switchopt_cli::RunConfig;
use switchopt_core::lattice::{solve_fixed_point, solve_n_switch, FixedPointOptions};
use switchopt_core::pde::{assemble_with, solve_with};
use switchopt_core::problem::ProblemTables;
use switchopt_core::sim::{evaluate_fixed_strategy, extract_policy, simulate, SimOptions, Strategy};
use switchopt_core::{Axis, Decision, GridSpec, MarkovChainApprox, StrategyStats, SwitchingProblem, TimeGrid, ValueField};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

struct Case {
    config: RunConfig,
    p: SwitchingProblem,
}

impl Case {
    fn load(name: &str) -> Case {
        let text = std::fs::read_to_string(configs().join(name)).unwrap();
        let config = RunConfig::parse(&text).unwrap();
        let p = config.problem.compile().unwrap();
        Case { config, p }
    }

    fn spec(&self) -> GridSpec {
        self.config.grid.spec()
    }

    fn lattice_on(&self, spec: &GridSpec) -> ValueField {
        let chain = MarkovChainApprox::build(&self.p, spec).unwrap();
        solve_fixed_point(&chain, &self.p, FixedPointOptions::default()).unwrap().0
    }

    fn pde_on(&self, spec: &GridSpec) -> ValueField {
        let times = TimeGrid::uniform(self.p.horizon(), spec.steps);
        let generator = assemble_with(&self.p, &spec.space, &times, self.config.solver.pde_drift).unwrap();
        let tables = ProblemTables::sample(&self.p, &spec.space, &times).unwrap();
        solve_with(&self.p, &generator, &tables, &times).unwrap().0
    }

    fn lattice(&self) -> ValueField {
        self.lattice_on(&self.spec())
    }

    fn pde(&self) -> ValueField {
        self.pde_on(&self.spec())
    }

    fn at_x0(&self, v: &ValueField) -> f64 {
        v.value_at(self.p.initial_mode(), 0, self.p.x0())
    }

    fn simulate(&self, v: &ValueField, paths: usize, seed: u64) -> StrategyStats {
        let policy = extract_policy(v, &self.p, 1e-9).unwrap();
        simulate(&self.p, &policy, SimOptions { paths, seed, substeps: 1 }).unwrap()
    }
}

/// Benchmark results shared by several criteria.
struct Bench {
    case: Case,
    lattice: ValueField,
    pde: ValueField,
    stats: StrategyStats,
    sim_seconds: f64,
}

type Verdict = (bool, String);

fn a1(b: &Bench) -> Verdict {
    let chain = MarkovChainApprox::build(&b.case.p, &b.case.spec()).unwrap();
    let (levels, trace) = solve_n_switch(&chain, &b.case.p, 50).unwrap();
    let worst_decrease = levels
        .windows(2)
        .map(|w| w[1].min_increment_over(&w[0]))
        .fold(f64::INFINITY, f64::min);
    let first_small = trace.entries.iter().skip(1).find(|e| e.sup_increment < 1e-8).map(|e| e.level);
    let limit_gap = levels.last().unwrap().sup_distance(&b.lattice);
    (
        worst_decrease >= -1e-12 && first_small.is_some_and(|l| l <= 50),
        format!(
            "min level increment {worst_decrease:.2e} (>= -1e-12); sup increment < 1e-8 at level {first_small:?}; \
             level 50 vs fixed point {limit_gap:.2e}"
        ),
    )
}

fn a2(b: &Bench, cases: &[(&str, Case)]) -> Verdict {
    let mut ok = true;
    let mut worst_lat = f64::NEG_INFINITY;
    let mut worst_pde = f64::NEG_INFINITY;
    let mut check = |case: &Case, lat: &ValueField, pde: &ValueField| {
        let tables = ProblemTables::sample(&case.p, lat.grid(), lat.times()).unwrap();
        worst_lat = worst_lat.max(lat.obstacle_excess(&tables));
        worst_pde = worst_pde.max(pde.obstacle_excess(&tables));
        ok &= lat.terminal_is_zero() && pde.terminal_is_zero();
    };
    check(&b.case, &b.lattice, &b.pde);
    for (_, case) in cases {
        check(case, &case.lattice(), &case.pde());
    }
    ok &= worst_lat <= 1e-9 && worst_pde <= 1e-8;
    (
        ok,
        format!(
            "max obstacle excess lattice {worst_lat:.2e} (<= 1e-9), pde {worst_pde:.2e} (<= 1e-8) over {} configs; terminal slices zero",
            cases.len() + 1
        ),
    )
}

fn a3(b: &Bench) -> Verdict {
    let start = Instant::now();
    let base = (b.case.at_x0(&b.lattice) - b.case.at_x0(&b.pde)).abs() / b.case.at_x0(&b.lattice);
    let fine = b.case.spec().refined();
    let lat = b.case.lattice_on(&fine);
    let pde = b.case.pde_on(&fine);
    let refined = (b.case.at_x0(&lat) - b.case.at_x0(&pde)).abs() / b.case.at_x0(&lat);
    let secs = start.elapsed().as_secs_f64();
    (
        base <= 0.01 && refined <= 0.005 && secs < 60.0,
        format!(
            "lattice {:.6} vs pde {:.6}: {:.3}% (<= 1%); refined {:.6} vs {:.6}: {:.3}% (<= 0.5%); {secs:.1}s",
            b.case.at_x0(&b.lattice),
            b.case.at_x0(&b.pde),
            100.0 * base,
            b.case.at_x0(&lat),
            b.case.at_x0(&pde),
            100.0 * refined
        ),
    )
}

fn a4(b: &Bench) -> Verdict {
    let v = b.case.at_x0(&b.lattice);
    let s = &b.stats;
    let dev = (s.mean - v).abs() / s.std_error;
    (
        s.paths == 100_000 && s.used == s.paths && dev <= 3.0 && b.sim_seconds < 60.0,
        format!(
            "mean J {:.6} vs v1(0,x0) {v:.6}: {dev:.2} SE (<= 3), SE {:.2e}, {} paths in {:.1}s",
            s.mean, s.std_error, s.paths, b.sim_seconds
        ),
    )
}

fn a5(b: &Bench) -> Verdict {
    let v = b.case.at_x0(&b.lattice);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let times = b.lattice.times().clone();
    let opts = SimOptions {
        paths: 10_000,
        seed: 55,
        substeps: 1,
    };
    let mut worst = f64::NEG_INFINITY;
    let mut within = 0;
    let mut best_mean = f64::NEG_INFINITY;
    for _ in 0..100 {
        let s = Strategy::random_threshold(&mut rng, 2, &[2.0], &[6.0]);
        let st = evaluate_fixed_strategy(&b.case.p, &s, &times, opts).unwrap();
        let excess = (st.mean - v) / st.std_error.max(f64::MIN_POSITIVE);
        worst = worst.max(excess);
        best_mean = best_mean.max(st.mean);
        if st.mean <= v + 3.0 * st.std_error {
            within += 1;
        }
    }
    (
        within == 100,
        format!("{within}/100 random threshold strategies within v + 3 SE; best mean {best_mean:.6}, largest (mean - v)/SE {worst:.2}"),
    )
}

/// Best payoff over every deterministic schedule with at most two switches on
/// the time grid, for constant profits and costs.
fn schedule_oracle(case: &Case, steps: usize, start: usize) -> f64 {
    let psi: Vec<f64> = (0..2).map(|i| case.p.profit_expr(i).as_constant().unwrap()).collect();
    let g = |i: usize, j: usize| case.p.cost_expr(i, j).as_constant().unwrap();
    let dt = case.p.horizon() / steps as f64;
    let payoff = |switches: &[usize]| {
        let mut mode = start;
        let mut total = 0.0;
        let mut k = 0;
        for n in 0..steps {
            while k < switches.len() && switches[k] == n {
                total -= g(mode, 1 - mode);
                mode = 1 - mode;
                k += 1;
            }
            total += psi[mode] * dt;
        }
        total
    };
    let mut best = payoff(&[]);
    for a in 0..steps {
        best = best.max(payoff(&[a]));
        for b2 in a..steps {
            best = best.max(payoff(&[a, b2]));
        }
    }
    best
}

fn a6() -> Verdict {
    let single = Case::load("constant_single.ini");
    let c = single.p.profit_expr(0).as_constant().unwrap();
    let want = c * single.p.horizon();
    let mut worst = 0.0f64;
    for v in [single.lattice(), single.pde()] {
        for x in v.slice(0, 0) {
            worst = worst.max((x - want).abs());
        }
    }
    let pair = Case::load("constant_pair.ini");
    let steps = pair.config.grid.steps;
    let oracle = [schedule_oracle(&pair, steps, 0), schedule_oracle(&pair, steps, 1)];
    let mut worst_pair = 0.0f64;
    for v in [pair.lattice(), pair.pde()] {
        for (i, o) in oracle.iter().enumerate() {
            for x in v.slice(i, 0) {
                worst_pair = worst_pair.max((x - o).abs());
            }
        }
    }
    (
        worst <= 1e-8 && worst_pair <= 1e-8 && (oracle[0] - 1.0).abs() < 1e-12 && (oracle[1] - 2.0).abs() < 1e-12,
        format!(
            "m=1: max |v - cT| {worst:.2e}; m=2: schedule oracle ({:.3}, {:.3}), max |v - oracle| {worst_pair:.2e} (<= 1e-8)",
            oracle[0], oracle[1]
        ),
    )
}

fn a7() -> Verdict {
    let case = Case::load("symmetric.ini");
    let gap = |v: &ValueField| {
        (0..=v.steps())
            .flat_map(|n| v.slice(0, n).iter().zip(v.slice(1, n)).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
            .fold(0.0f64, f64::max)
    };
    let lat = gap(&case.lattice());
    let pde = gap(&case.pde());
    (
        lat <= 1e-12 && pde <= 1e-8,
        format!("max |v1 - v2| lattice {lat:.2e} (<= 1e-12), pde {pde:.2e} (<= 1e-8)"),
    )
}

fn run_cli(args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_switchopt")).args(args).output().unwrap();
    out.status.code().unwrap_or(-1)
}

fn a8(tmp: &Path) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, want) in [("zero_cycle.ini", 2), ("zero_pair.ini", 2), ("negative_cost.ini", 0)] {
        let config = configs().join(name);
        let out = tmp.join(format!("a8_{name}"));
        let code = run_cli(&["validate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        ok &= code == want;
        parts.push(format!("{name} exit {code} (want {want})"));
    }
    (ok, parts.join(", "))
}

/// Best payoff over every strategy on the chain, by walking the full tree of
/// chain outcomes; up to `m` instantaneous switches per decision time.
fn enumerate(p: &SwitchingProblem, chain: &MarkovChainApprox, n: usize, node: usize, mode: usize, budget: usize) -> f64 {
    if n == chain.steps() {
        return 0.0;
    }
    let t = chain.times().times()[n];
    let x = chain.grid().point(node);
    let dt = chain.times().dt(n);
    let mut options = vec![(mode, 0.0, 0)];
    let mut frontier = options.clone();
    for _ in 0..2 {
        let mut next = Vec::new();
        for &(at, paid, used) in &frontier {
            if used < budget {
                next.push((1 - at, paid + p.switch_cost(at, 1 - at, t, &x).unwrap(), used + 1));
            }
        }
        options.extend(next.iter().cloned());
        frontier = next;
    }
    options
        .into_iter()
        .map(|(end, paid, used)| {
            let mut v = p.profit_rate(end, t, &x).unwrap() * dt - paid;
            for (target, prob) in chain.stencil(n, node) {
                v += prob * enumerate(p, chain, n + 1, target, end, budget - used);
            }
            v
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn a9() -> Verdict {
    let case = Case::load("negative_cost.ini");
    let coarse = GridSpec::new(vec![Axis::new(0.0, 4.0, 7)], 4).unwrap();
    let chain = MarkovChainApprox::build(&case.p, &coarse).unwrap();
    let small = solve_fixed_point(&chain, &case.p, FixedPointOptions::default()).unwrap().0;
    let mut oracle_gap = 0.0f64;
    for node in 0..7 {
        for i in 0..2 {
            let e = enumerate(&case.p, &chain, 0, node, i, 4);
            oracle_gap = oracle_gap.max((small.get(i, 0, node) - e).abs());
        }
    }
    let closed = |v: &ValueField| {
        (0..v.grid().node_count())
            .map(|node| (v.get(0, 0, node) - 0.5).abs().max(v.get(1, 0, node).abs()))
            .fold(0.0f64, f64::max)
    };
    let lat = case.lattice();
    let pde = case.pde();
    let closed_gap = closed(&lat).max(closed(&pde)).max(closed(&small));
    let policy = extract_policy(&lat, &case.p, 1e-9).unwrap();
    let nodes = lat.grid().node_count();
    let at_start = (0..nodes).all(|node| policy.decision(0, node, 0) == Decision::SwitchTo(1));
    let stays = (0..=lat.steps()).all(|n| (0..nodes).all(|node| policy.decision(n, node, 1) == Decision::Continue));
    let st = case.simulate(&lat, 10_000, 9);
    let once = st.switch_histogram == vec![0, 10_000];
    (
        oracle_gap <= 1e-8 && closed_gap <= 1e-8 && at_start && stays && once,
        format!(
            "|lattice - enumeration| {oracle_gap:.2e}; |v - (0.5, 0)| {closed_gap:.2e} on both engines; \
             switch 1->2 at t=0 everywhere {at_start}, mode 2 never switches {stays}, every path switches once {once}"
        ),
    )
}

fn a10(b: &Bench, tmp: &Path) -> Verdict {
    let mut hits = b.stats.guard_hits;
    let mut total = b.stats.paths;
    for name in ["negative_cost.ini", "symmetric.ini", "constant_pair.ini", "constant_single.ini"] {
        let case = Case::load(name);
        let st = case.simulate(&case.lattice(), 100_000, 10);
        hits += st.guard_hits;
        total += st.paths;
    }
    let config = configs().join("zero_pair.ini");
    let out = tmp.join("a10_corrupt");
    let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());
    let solve = run_cli(&["solve", "--config", c, "--out", o, "--force"]);
    let refused = run_cli(&["solve", "--config", c, "--out", o]);
    let sim = run_cli(&["simulate", "--config", c, "--out", o]);
    let stats = std::fs::read_to_string(out.join("stats.txt")).map(|t| key_values(&t)).unwrap_or_default();
    let corrupt_hits: usize = stats.get("guard_hits").and_then(|v| v.parse().ok()).unwrap_or(0);
    (
        hits == 0 && refused == 2 && sim == 4 && corrupt_hits > 0,
        format!(
            "{hits} guard trips in {total} paths over 5 passing configs; corrupted config: solve without --force exit {refused}, \
             forced solve exit {solve}, simulate exit {sim} with {corrupt_hits} trips"
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let case = Case::load("benchmark.ini");
    let lattice = case.lattice();
    let pde = case.pde();
    let t0 = Instant::now();
    let stats = case.simulate(&lattice, 100_000, 2024);
    let sim_seconds = t0.elapsed().as_secs_f64();
    let bench = Bench {
        case,
        lattice,
        pde,
        stats,
        sim_seconds,
    };
    let extra: Vec<(&str, Case)> = ["negative_cost.ini", "symmetric.ini", "constant_pair.ini"]
        .into_iter()
        .map(|n| (n, Case::load(n)))
        .collect();

    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("A1", Box::new(|| a1(&bench))),
        ("A2", Box::new(|| a2(&bench, &extra))),
        ("A3", Box::new(|| a3(&bench))),
        ("A4", Box::new(|| a4(&bench))),
        ("A5", Box::new(|| a5(&bench))),
        ("A6", Box::new(a6)),
        ("A7", Box::new(a7)),
        ("A8", Box::new(|| a8(tmp.path()))),
        ("A9", Box::new(a9)),
        ("A10", Box::new(|| a10(&bench, tmp.path()))),
    ];
    let mut failed = 0;
    for (id, check) in &criteria {
        let (ok, detail) = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        if !ok {
            failed += 1;
        }
        println!("{id:<4} {} {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} passed, {failed} failed in {:.1}s", criteria.len() - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
