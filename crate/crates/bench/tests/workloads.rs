use gridscreen_bench::{n1_scenarios, perturbed};
use gridscreen_core::grid::{ieee118, ieee14};
use gridscreen_core::metrics::Quantity;
use gridscreen_core::{batch_solve, PredictionSet, SolverOptions};

#[test]
fn n1_workload_skips_islanding_outages() {
    assert_eq!(n1_scenarios(&ieee118()).len(), 177);
    let case = ieee14();
    let scenarios = n1_scenarios(&case);
    assert!(batch_solve(&case, &scenarios, &SolverOptions::default()).iter().all(|r| r.is_ok()));
}

#[test]
fn perturbation_is_bounded_and_deterministic() {
    let case = ieee14();
    let scenarios = n1_scenarios(&case);
    let flows: Vec<_> = batch_solve(&case, &scenarios, &SolverOptions::default()).into_iter().map(|r| r.unwrap().lines).collect();
    let truth = PredictionSet::from_flows(case.n_lines(), flows.iter());
    let a = perturbed(&truth, 0.05);
    assert_eq!(a, perturbed(&truth, 0.05));
    for (x, t) in a.column(Quantity::POr).unwrap().iter().zip(truth.column(Quantity::POr).unwrap()) {
        assert!((x - t).abs() <= 0.05 * t.abs() + 1e-12);
    }
}
