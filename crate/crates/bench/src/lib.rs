//! Workloads shared by the benchmarks.

use gridscreen_core::grid::validate_topology;
use gridscreen_core::{GridCase, Injections, PredictionSet, Topology};

/// Every single-line outage that keeps the grid connected, nominal injections.
pub fn n1_scenarios(case: &GridCase) -> Vec<(Topology, Injections)> {
    let reference = Topology::reference(case);
    let inj = Injections::nominal(case);
    (0..case.n_lines())
        .map(|l| {
            let mut t = reference.clone();
            t.line_status[l] = false;
            t
        })
        .filter(|t| validate_topology(case, t).is_valid())
        .map(|t| (t, inj.clone()))
        .collect()
}

/// Truth-like predictions perturbed by a deterministic relative ripple.
pub fn perturbed(truth: &PredictionSet, amplitude: f64) -> PredictionSet {
    let mut out = truth.clone();
    for q in truth.quantities().collect::<Vec<_>>() {
        for (i, v) in out.column_mut(q).expect("listed").iter_mut().enumerate() {
            *v *= 1.0 + amplitude * ((i as f64) * 0.618).sin();
        }
    }
    out
}
