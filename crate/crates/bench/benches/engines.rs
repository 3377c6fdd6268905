use criterion::{criterion_group, criterion_main, Criterion};

use gridscreen_bench::n1_scenarios;
use gridscreen_core::grid::{ieee118, ieee14};
use gridscreen_core::{batch_solve, solve_newton_raphson, SolverOptions};

fn n1(c: &mut Criterion) {
    let opts = SolverOptions::default();
    for (name, case) in [("ieee14", ieee14()), ("ieee118", ieee118())] {
        let scenarios = n1_scenarios(&case);
        let mut g = c.benchmark_group(format!("n1/{name}"));
        g.sample_size(10);
        g.bench_function("sequential", |b| {
            b.iter(|| {
                scenarios
                    .iter()
                    .map(|(t, i)| solve_newton_raphson(&case, t, i, &opts).is_ok())
                    .filter(|&ok| ok)
                    .count()
            })
        });
        g.bench_function("batched", |b| b.iter(|| batch_solve(&case, &scenarios, &opts).len()));
        g.finish();
    }
}

fn single(c: &mut Criterion) {
    let case = ieee118();
    let (topo, inj) = (gridscreen_core::Topology::reference(&case), gridscreen_core::Injections::nominal(&case));
    let opts = SolverOptions::default();
    c.bench_function("newton/ieee118", |b| b.iter(|| solve_newton_raphson(&case, &topo, &inj, &opts).unwrap().iterations));
}

criterion_group!(benches, n1, single);
criterion_main!(benches);
