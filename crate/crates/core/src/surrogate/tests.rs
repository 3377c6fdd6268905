use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::grid::fixtures::two_bus;
use crate::grid::{ieee118, ieee14, GridCase, Topology, TopologyAction};
use crate::metrics::{evaluate_ml, evaluate_physics, PhysicsContext, PhysicsTolerances, PredictionSet, Quantity};
use crate::powerflow::{solve_newton_raphson, Injections, SolverOptions};

/// Solved samples with realized production.
fn solved(case: &GridCase, outages: &[Option<usize>]) -> (Vec<Topology>, Vec<Injections>, PredictionSet) {
    let mut topos = Vec::new();
    let mut injs = Vec::new();
    let mut flows = Vec::new();
    for &o in outages {
        let mut t = Topology::reference(case);
        if let Some(l) = o {
            t = t.apply(case, &TopologyAction::DisconnectLine(l)).unwrap();
        }
        let mut inj = Injections::nominal(case);
        let sol = solve_newton_raphson(case, &t, &inj, &SolverOptions::default()).unwrap();
        inj.prod_p = sol.generators.p_mw.clone();
        topos.push(t);
        injs.push(inj);
        flows.push(sol.lines);
    }
    (topos, injs, PredictionSet::from_flows(case.n_lines(), &flows))
}

fn stacked(pred: &PredictionSet, s: usize) -> Vec<f64> {
    let mut y = pred.row(Quantity::POr, s).unwrap().to_vec();
    y.extend_from_slice(pred.row(Quantity::PEx, s).unwrap());
    y
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn plane(n_vars: usize, rows: Vec<Vec<(usize, f64)>>, b: Vec<f64>) -> LinearConstraintSystem {
    LinearConstraintSystem::new(Arc::new(ConstraintMatrix::new(n_vars, rows).unwrap()), b).unwrap()
}

#[test]
fn symmetric_projection_onto_sum_zero() {
    let sys = plane(2, vec![vec![(0, 1.0), (1, 1.0)]], vec![0.0]);
    let z = kkt_project(&[1.0, 1.0], &sys).unwrap();
    assert!(z.iter().all(|v| v.abs() < 1e-15), "{z:?}");
    assert_eq!(kkt_project(&[3.0, -3.0], &sys).unwrap(), vec![3.0, -3.0]);
    assert!(kkt_project(&[1.0], &sys).is_err());
}

#[test]
fn rank_deficiency_is_caught_at_construction() {
    let rows = vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 2.0), (1, 2.0)]];
    assert!(matches!(ConstraintMatrix::new(2, rows), Err(SurrogateError::RankDeficient { .. })));
    assert!(matches!(ConstraintMatrix::new(2, vec![vec![(5, 1.0)]]), Err(SurrogateError::Dimension(_))));
}

#[test]
fn single_line_gives_two_rows() {
    let case = two_bus(0.01, 0.1, 0.0, 50.0, 10.0);
    let topo = Topology::reference(&case);
    let mut inj = Injections::nominal(&case);
    let sol = solve_newton_raphson(&case, &topo, &inj, &SolverOptions::default()).unwrap();
    inj.prod_p = sol.generators.p_mw.clone();
    let sys = build_conservation_constraints(&case, &topo, &inj).unwrap();
    assert_eq!(sys.matrix.n_vars(), 2);
    assert_eq!(sys.matrix.rows(), &[vec![(0, 1.0)], vec![(1, 1.0)]]);
    assert!((sys.b[1] + 50.0).abs() < 1e-12);
    let y = [sol.lines.p_or[0], sol.lines.p_ex[0]];
    assert!(sys.residual_inf(&y) < 1e-6);
}

#[test]
fn isolated_empty_nodes_are_dropped() {
    let case = two_bus(0.01, 0.1, 0.0, 0.0, 0.0);
    let topo = Topology::reference(&case).apply(&case, &TopologyAction::DisconnectLine(0)).unwrap();
    let mut inj = Injections::nominal(&case);
    inj.prod_p.iter_mut().for_each(|p| *p = 0.0);
    let sys = build_conservation_constraints(&case, &topo, &inj).unwrap();
    assert_eq!(sys.matrix.n_rows(), 0);
    assert_eq!(kkt_project(&[4.0, 2.0], &sys).unwrap(), vec![4.0, 2.0]);
    inj.prod_p[0] = 5.0;
    assert!(matches!(
        build_conservation_constraints(&case, &topo, &inj),
        Err(SurrogateError::Infeasible { .. })
    ));
}

#[test]
fn ground_truth_is_feasible() {
    let case = ieee14();
    let (topos, injs, truth) = solved(&case, &[None, Some(3), Some(10)]);
    for s in 0..topos.len() {
        let sys = build_conservation_constraints(&case, &topos[s], &injs[s]).unwrap();
        let y = stacked(&truth, s);
        assert!(sys.residual_inf(&y) / case.base_mva() < 1e-8);
        // and a fixed point of the projection
        let z = kkt_project(&y, &sys).unwrap();
        assert!(dist(&y, &z) < 1e-6);
    }
}

#[test]
fn projection_beats_random_feasible_points() {
    let case = ieee14();
    let (topos, injs, truth) = solved(&case, &[Some(5)]);
    let sys = build_conservation_constraints(&case, &topos[0], &injs[0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let noisy: Vec<f64> = stacked(&truth, 0).iter().map(|v| v + rng.random_range(-20.0..20.0)).collect();
    let best = kkt_project(&noisy, &sys).unwrap();
    let d = dist(&noisy, &best);
    let anchor = kkt_project(&stacked(&truth, 0), &sys).unwrap();
    for _ in 0..1000 {
        // feasible points: a feasible anchor plus a random null-space direction
        let dir: Vec<f64> = (0..noisy.len()).map(|_| rng.random_range(-30.0..30.0)).collect();
        let along = sys.matrix.project(&dir, &vec![0.0; sys.matrix.n_rows()]);
        let point: Vec<f64> = anchor.iter().zip(&along).map(|(t, a)| t + a).collect();
        assert!(sys.residual_inf(&point) < 1e-9);
        assert!(d <= dist(&noisy, &point) + 1e-9);
    }
}

#[test]
fn cache_reuses_factorizations() {
    let case = ieee14();
    let (topos, injs, truth) = solved(&case, &[None, Some(3), None, Some(3), None]);
    let cache = ProjectionCache::new();
    let (out, report) = project_predictions(&truth, &case, &topos, &injs, &cache).unwrap();
    assert_eq!(report.topologies, 2);
    assert!(report.max_residual < 1e-10);
    let gap = stacked(&out, 1).iter().zip(stacked(&truth, 1)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-6);
}

fn noisy_predictions(case: &GridCase, truth: &PredictionSet, seed: u64, scale: f64) -> PredictionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pred = truth.clone();
    for q in Quantity::ALL {
        for v in pred.column_mut(q).unwrap() {
            *v += scale * rng.random_range(-1.0..1.0);
        }
    }
    assert_eq!(pred.n_lines(), case.n_lines());
    pred
}

#[test]
fn mask_project_remask_pipeline() {
    let case = ieee14();
    let (topos, injs, truth) = solved(&case, &[Some(2), Some(7), None, Some(12)]);
    let pred = noisy_predictions(&case, &truth, 3, 5.0);
    let (out, report) = project_predictions(&pred, &case, &topos, &injs, &ProjectionCache::new()).unwrap();
    assert!(report.max_residual < 1e-8);
    let ctx = PhysicsContext {
        case: &case,
        topologies: &topos,
        injections: &injs,
    };
    let before = evaluate_physics(&pred, &ctx, &PhysicsTolerances::default()).unwrap();
    let after = evaluate_physics(&out, &ctx, &PhysicsTolerances::default()).unwrap();
    assert!(before.p4 > 0.0 && before.p7 > 1e-3);
    assert_eq!(after.p4, 0.0);
    assert!(after.p7 <= 1e-6, "{}", after.p7);
    // currents and voltages are left alone on connected lines
    assert_eq!(out.row(Quantity::VOr, 2), pred.row(Quantity::VOr, 2));
}

#[test]
fn mask_examples() {
    let case = ieee14();
    let (topos, _, truth) = solved(&case, &[None, Some(4)]);
    let pred = noisy_predictions(&case, &truth, 9, 1.0);
    let masked = apply_hard_zero_mask(&pred, &topos).unwrap();
    assert_eq!(masked.row(Quantity::AOr, 0), pred.row(Quantity::AOr, 0));
    for q in Quantity::ALL {
        let v = masked.row(q, 1).unwrap()[4];
        if q.is_flow() {
            assert_eq!(v, 0.0);
        } else {
            assert_eq!(v, pred.row(q, 1).unwrap()[4]);
        }
    }
    assert_eq!(apply_hard_zero_mask(&masked, &topos).unwrap(), masked);
    // reorder then mask equals mask then reorder
    let order = [1, 0];
    let swapped: Vec<Topology> = order.iter().map(|&i| topos[i].clone()).collect();
    assert_eq!(
        apply_hard_zero_mask(&pred.select(&order), &swapped).unwrap(),
        masked.select(&order)
    );
    assert!(apply_hard_zero_mask(&pred, &topos[..1]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn projection_is_idempotent_and_contracting(seed in any::<u64>(), outage in 0usize..20, scale in 0.1..50.0f64) {
        let case = ieee14();
        let valid: Vec<usize> = (0..case.n_lines())
            .filter(|&l| {
                let t = Topology::reference(&case).apply(&case, &TopologyAction::DisconnectLine(l)).unwrap();
                crate::grid::validate_topology(&case, &t).is_valid()
            })
            .collect();
        let (topos, injs, truth) = solved(&case, &[Some(valid[outage % valid.len()])]);
        let sys = build_conservation_constraints(&case, &topos[0], &injs[0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = stacked(&truth, 0).iter().map(|v| v + scale * rng.random_range(-1.0..1.0)).collect();
        let once = kkt_project(&y, &sys).unwrap();
        let twice = kkt_project(&once, &sys).unwrap();
        prop_assert!(once.iter().zip(&twice).all(|(a, b)| (a - b).abs() <= 1e-12));
        prop_assert!(sys.residual_inf(&once) < 1e-10);
        let norm = |v: Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(norm(sys.residual(&once)) < norm(sys.residual(&y)));
    }
}

#[test]
fn dc_baseline_contract() {
    let case = ieee14();
    let (topos, injs, truth) = solved(&case, &[None, Some(1), Some(6)]);
    let inputs = InputBatch {
        case: &case,
        injections: &injs,
        topologies: &topos,
    };
    let mut model = DcBaseline::new();
    assert_eq!(model.predict(&inputs), Err(SurrogateError::NotFitted));
    model.fit(&inputs, &truth).unwrap();
    let (a, _) = timed_predict(&model, &inputs).unwrap();
    assert_eq!(a, model.predict(&inputs).unwrap());
    let ml = evaluate_ml(&a, &truth).unwrap();
    assert!(ml.values().iter().all(|v| v.is_finite()));
    // active flows are close; currents miss the reactive part entirely
    assert!(ml.mape10_p_or < 0.2 && ml.mape10_p_ex < 0.2, "{ml:?}");
    // disconnected lines carry nothing
    assert_eq!(a.row(Quantity::POr, 1).unwrap()[1], 0.0);
}

#[test]
fn dc_baseline_zero_injection_gives_zero_flow() {
    let case = ieee14();
    let (topos, mut injs, truth) = solved(&case, &[None]);
    let mut model = DcBaseline::new();
    model
        .fit(
            &InputBatch {
                case: &case,
                injections: &injs,
                topologies: &topos,
            },
            &truth,
        )
        .unwrap();
    for inj in &mut injs {
        inj.prod_p.iter_mut().chain(&mut inj.load_p).chain(&mut inj.load_q).for_each(|x| *x = 0.0);
    }
    let out = model
        .predict(&InputBatch {
            case: &case,
            injections: &injs,
            topologies: &topos,
        })
        .unwrap();
    for q in [Quantity::POr, Quantity::PEx, Quantity::AOr, Quantity::QOr] {
        assert!(out.column(q).unwrap().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn dc_baseline_on_a_lossless_line() {
    let case = two_bus(0.0, 0.1, 0.0, 20.0, 0.0);
    let (topos, injs, truth) = solved(&case, &[None]);
    let inputs = InputBatch {
        case: &case,
        injections: &injs,
        topologies: &topos,
    };
    let mut model = DcBaseline::new();
    model.fit(&inputs, &truth).unwrap();
    let out = model.predict(&inputs).unwrap();
    let (p, t) = (out.row(Quantity::POr, 0).unwrap()[0], truth.row(Quantity::POr, 0).unwrap()[0]);
    assert!((p - t).abs() / t.abs() < 1e-2, "{p} {t}");
    let ctx = PhysicsContext {
        case: &case,
        topologies: &topos,
        injections: &injs,
    };
    // zero losses: every sample falls outside the loss range
    assert_eq!(evaluate_physics(&out, &ctx, &PhysicsTolerances::default()).unwrap().p5, 1.0);
}

#[test]
fn dc_baseline_reports_islanded_inputs() {
    let case = ieee118();
    let (topos, injs, truth) = solved(&case, &[None]);
    let mut model = DcBaseline::new();
    let inputs = InputBatch {
        case: &case,
        injections: &injs,
        topologies: &topos,
    };
    model.fit(&inputs, &truth).unwrap();
    // the first single outage that islands part of the grid
    let islands: Vec<Topology> = (0..case.n_lines())
        .map(|l| Topology::reference(&case).apply(&case, &TopologyAction::DisconnectLine(l)).unwrap())
        .filter(|t| !crate::grid::validate_topology(&case, t).is_valid())
        .take(1)
        .collect();
    let bad = InputBatch {
        case: &case,
        injections: &injs,
        topologies: &islands,
    };
    assert!(matches!(model.predict(&bad), Err(SurrogateError::Solver { sample: 0, .. })));
}
