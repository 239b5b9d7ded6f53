use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use switchopt_bench::{grid, plant, three_modes};
use switchopt_core::lattice::{solve_fixed_point, solve_n_switch, FixedPointOptions};
use switchopt_core::pde::solve_system;
use switchopt_core::sim::{extract_policy, simulate, SimOptions};
use switchopt_core::{MarkovChainApprox, TimeGrid};

fn lattice(c: &mut Criterion) {
    let mut g = c.benchmark_group("lattice");
    for (name, p) in [("two_modes", plant()), ("three_modes", three_modes())] {
        let spec = grid(200, 200);
        g.bench_function(BenchmarkId::new("build_chain", name), |b| {
            b.iter(|| MarkovChainApprox::build(&p, &spec).unwrap())
        });
        let chain = MarkovChainApprox::build(&p, &spec).unwrap();
        g.bench_function(BenchmarkId::new("fixed_point", name), |b| {
            b.iter(|| solve_fixed_point(&chain, &p, FixedPointOptions::default()).unwrap())
        });
        g.bench_function(BenchmarkId::new("n_switch_10", name), |b| {
            b.iter(|| solve_n_switch(&chain, &p, 10).unwrap())
        });
    }
    g.finish();
}

fn pde(c: &mut Criterion) {
    let mut g = c.benchmark_group("pde");
    for nodes in [100, 200, 400] {
        let spec = grid(nodes, nodes);
        let times = TimeGrid::uniform(1.0, spec.steps);
        let p = plant();
        g.bench_with_input(BenchmarkId::new("howard", nodes), &nodes, |b, _| {
            b.iter(|| solve_system(&p, &spec.space, &times).unwrap())
        });
    }
    g.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let p = plant();
    let chain = MarkovChainApprox::build(&p, &grid(200, 200)).unwrap();
    let (v, _) = solve_fixed_point(&chain, &p, FixedPointOptions::default()).unwrap();
    let policy = extract_policy(&v, &p, 1e-9).unwrap();
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    g.bench_function("policy_10k_paths", |b| {
        b.iter(|| {
            simulate(&p, &policy, SimOptions { paths: 10_000, seed: 1, substeps: 1 }).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, lattice, pde, monte_carlo);
criterion_main!(benches);
