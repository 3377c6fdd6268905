use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::grid::{build_ybus, ieee118, ieee14, validate_topology, TopologyAction};
use crate::powerflow::jacobian::{phasors, stacked_mismatch, JacobianLayout};
use crate::powerflow::{solve_newton_raphson, Injections, NodeSpec, PowerFlowError, SolverOptions};
use crate::sparse::{CsrMatrix, TripletBuilder};

fn n1(case: &GridCase) -> Vec<Topology> {
    let base = Topology::reference(case);
    (0..case.n_lines())
        .map(|l| base.apply(case, &TopologyAction::DisconnectLine(l)).unwrap())
        .collect()
}

fn without(case: &GridCase, lines: &[usize]) -> Topology {
    lines.iter().fold(Topology::reference(case), |t, &l| {
        t.apply(case, &TopologyAction::DisconnectLine(l)).unwrap()
    })
}

/// First substation split that leaves a valid, connected grid.
fn valid_split(case: &GridCase, skip: usize) -> Topology {
    let reference = Topology::reference(case);
    (0..case.n_substations())
        .filter_map(|s| {
            let n = case.roster(s).len();
            if n < 4 {
                return None;
            }
            let mut busbars = vec![1i8; n];
            busbars[n - 1] = 2;
            busbars[n - 2] = 2;
            let t = reference
                .apply(case, &TopologyAction::SetBus { substation: s, busbars })
                .ok()?;
            validate_topology(case, &t).is_valid().then_some(t)
        })
        .nth(skip)
        .expect("case has valid splits")
}

fn base_for(case: &GridCase, topos: &[Topology]) -> (ScenarioCluster, ClusterBase) {
    let clusters = cluster_scenarios(case, topos);
    assert_eq!(clusters.len(), 1);
    let base = ClusterBase::new(case, &clusters[0]).unwrap();
    (clusters.into_iter().next().unwrap(), base)
}

fn materialize(base: &ClusterBase, delta: &DeltaAdmittance) -> CsrMatrix<Complex64> {
    let mut m = base.y.matrix.clone();
    for e in &delta.entries {
        m.values_mut()[e.pos] += e.value;
    }
    m
}

/// Bit-exact comparison, treating entries missing from either pattern as 0.
fn assert_same_matrix(a: &CsrMatrix<Complex64>, b: &CsrMatrix<Complex64>) {
    assert_eq!(a.nrows(), b.nrows());
    for (r, c, v) in a.iter() {
        assert_eq!(v, b.get(r, c), "entry ({r},{c})");
    }
    for (r, c, v) in b.iter() {
        assert_eq!(v, a.get(r, c), "entry ({r},{c})");
    }
}

#[test]
fn delta_of_base_member_is_empty() {
    let case = ieee14();
    let topos = vec![Topology::reference(&case), without(&case, &[3])];
    let (cluster, base) = base_for(&case, &topos);
    let d = build_delta_admittance(&case, &base, &cluster, 0, &topos[0]).unwrap();
    assert!(d.is_empty());
}

#[test]
fn single_outage_touches_four_entries() {
    let case = ieee14();
    let topos = vec![Topology::reference(&case), without(&case, &[5])];
    let (cluster, base) = base_for(&case, &topos);
    let d = build_delta_admittance(&case, &base, &cluster, 1, &topos[1]).unwrap();
    assert_eq!(d.entries.len(), 4);
    let (k, m) = cluster.nodes.line_nodes(&case, &topos[0], 5).unwrap();
    let mut cells: Vec<(usize, usize)> = d.entries.iter().map(|e| (e.row, e.col)).collect();
    cells.sort_unstable();
    let mut expected = vec![(k, k), (k, m), (m, k), (m, m)];
    expected.sort_unstable();
    assert_eq!(cells, expected);
}

#[test]
fn double_outage_matches_rebuild_exactly() {
    let case = ieee14();
    let member = without(&case, &[2, 7]);
    let topos = vec![Topology::reference(&case), member.clone()];
    let (cluster, base) = base_for(&case, &topos);
    let d = build_delta_admittance(&case, &base, &cluster, 1, &member).unwrap();
    assert_same_matrix(&materialize(&base, &d), &build_ybus(&case, &member).unwrap().matrix);
}

#[test]
fn parallel_outages_merge_into_one_entry_per_cell() {
    let case = ieee118();
    // two lines sharing both end substations, if any
    let lines = case.lines();
    let pair = (0..lines.len())
        .flat_map(|a| ((a + 1)..lines.len()).map(move |b| (a, b)))
        .find(|&(a, b)| {
            let (x, y) = (&lines[a], &lines[b]);
            (x.from, x.to) == (y.from, y.to) || (x.from, x.to) == (y.to, y.from)
        });
    let Some((a, b)) = pair else { return };
    let member = without(&case, &[a, b]);
    if !validate_topology(&case, &member).is_valid() {
        return;
    }
    let topos = vec![Topology::reference(&case), member.clone()];
    let (cluster, base) = base_for(&case, &topos);
    let d = build_delta_admittance(&case, &base, &cluster, 1, &member).unwrap();
    assert_eq!(d.entries.len(), 4);
    assert_same_matrix(&materialize(&base, &d), &build_ybus(&case, &member).unwrap().matrix);
}

#[test]
fn delta_rejects_foreign_topologies() {
    let case = ieee14();
    let topos = vec![without(&case, &[4]), without(&case, &[6])];
    let (cluster, base) = base_for(&case, &topos);
    let split = valid_split(&case, 0);
    assert_eq!(
        build_delta_admittance(&case, &base, &cluster, 0, &split),
        Err(ContingencyError::SignatureMismatch)
    );
    // line 9 is in service everywhere in the cluster, so the base has it;
    // a member must not bring a line the base lacks
    let narrow = vec![without(&case, &[4])];
    let (nc, nb) = base_for(&case, &narrow);
    assert_eq!(
        build_delta_admittance(&case, &nb, &nc, 0, &Topology::reference(&case)),
        Err(ContingencyError::LineNotInBase { line: 4 })
    );
}

#[test]
fn n1_scenarios_share_one_cluster() {
    let case = ieee118();
    let topos: Vec<Topology> = n1(&case).into_iter().take(50).collect();
    let clusters = cluster_scenarios(&case, &topos);
    assert_eq!(clusters.len(), 1);
    assert_eq!(clusters[0].members, (0..50).collect::<Vec<_>>());
    assert!(clusters[0].base_topology.line_status.iter().all(|&s| s));
}

#[test]
fn splits_form_their_own_clusters() {
    let case = ieee14();
    let a = valid_split(&case, 0);
    let b = valid_split(&case, 1);
    let topos = vec![
        Topology::reference(&case),
        a.clone(),
        without(&case, &[3]),
        b.clone(),
        a,
    ];
    let clusters = cluster_scenarios(&case, &topos);
    let members: Vec<Vec<usize>> = clusters.iter().map(|c| c.members.clone()).collect();
    assert_eq!(members, vec![vec![0, 2], vec![1, 4], vec![3]]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clustering_partitions_input(picks in proptest::collection::vec(0usize..6, 1..20)) {
        let case = ieee14();
        let pool = vec![
            Topology::reference(&case),
            without(&case, &[1]),
            without(&case, &[8, 10]),
            valid_split(&case, 0),
            valid_split(&case, 1),
            valid_split(&case, 0).apply(&case, &TopologyAction::DisconnectLine(2)).unwrap(),
        ];
        let topos: Vec<Topology> = picks.iter().map(|&i| pool[i].clone()).collect();
        let clusters = cluster_scenarios(&case, &topos);
        let mut seen = vec![0usize; topos.len()];
        for c in &clusters {
            prop_assert!(c.members.windows(2).all(|w| w[0] < w[1]));
            for &m in &c.members {
                seen[m] += 1;
                prop_assert_eq!(&ClusterSignature::of(&case, &topos[m]), &c.signature);
                for (l, &on) in topos[m].line_status.iter().enumerate() {
                    prop_assert!(!on || c.base_topology.line_status[l]);
                }
            }
        }
        prop_assert!(seen.iter().all(|&n| n == 1));
        let sigs: std::collections::HashSet<_> = clusters.iter().map(|c| c.signature.clone()).collect();
        prop_assert_eq!(sigs.len(), clusters.len());
    }

    #[test]
    fn delta_reconstruction_is_exact(a in 0usize..186, b in 0usize..186, pair in any::<bool>()) {
        let case = ieee118();
        let lines: Vec<usize> = if pair && a != b { vec![a, b] } else { vec![a] };
        let member = without(&case, &lines);
        let reference = Topology::reference(&case);
        prop_assume!(ClusterSignature::of(&case, &member) == ClusterSignature::of(&case, &reference));
        let topos = vec![reference, member.clone()];
        let (cluster, base) = base_for(&case, &topos);
        let d = build_delta_admittance(&case, &base, &cluster, 1, &member).unwrap();
        let rebuilt = build_ybus(&case, &member).unwrap().matrix;
        let mat = materialize(&base, &d);
        for (r, c, v) in mat.iter() {
            prop_assert_eq!(v, rebuilt.get(r, c));
        }
        for (r, c, v) in rebuilt.iter() {
            prop_assert_eq!(v, mat.get(r, c));
        }
    }
}

fn cluster_system(case: &GridCase, topos: &[Topology], inj: &Injections) -> ClusterSystem {
    let clusters = cluster_scenarios(case, topos);
    ClusterSystem::new(case, clusters[0].clone(), &topos[0], inj).unwrap()
}

fn member(case: &GridCase, sys: &ClusterSystem, i: usize, topo: &Topology, inj: &Injections, seed: u64) -> MemberState {
    let spec = NodeSpec::build(case, topo, &sys.cluster.nodes, inj).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.kinds.len();
    MemberState {
        scenario: i,
        delta: sys.base.delta(case, i, topo).unwrap(),
        vm: (0..n).map(|_| rng.random_range(0.95..1.05)).collect(),
        va: (0..n).map(|_| rng.random_range(-0.2..0.2)).collect(),
        spec,
    }
}

#[test]
fn single_block_equals_plain_newton_system() {
    let case = ieee14();
    let inj = Injections::nominal(&case);
    let topo = without(&case, &[6]);
    let topos = vec![Topology::reference(&case), topo.clone()];
    let sys = cluster_system(&case, &topos, &inj);
    let m = member(&case, &sys, 1, &topo, &inj, 3);
    let system = assemble_block_system(&sys, std::slice::from_ref(&m));

    // direct assembly from the member's own admittance matrix
    let y = build_ybus(&case, &topo).unwrap();
    let layout = JacobianLayout::new(y.matrix.pattern().clone(), &m.spec.kinds);
    let v = phasors(&m.vm, &m.va);
    let ibus = y.matrix.mul_vec(&v);
    let mut f = vec![0.0; layout.dim()];
    stacked_mismatch(&layout.unknowns, &v, &ibus, &m.spec.p, &m.spec.q, &mut f);
    let mut jac = vec![0.0; layout.pattern.nnz()];
    layout.fill(&y.matrix, &v, &ibus, &mut jac);
    let direct = CsrMatrix::new(layout.pattern.clone(), jac).to_dense();

    assert_eq!(system.blocks.len(), 1);
    let batched = system.matrix().to_dense();
    assert!((batched - direct).amax() < 1e-12);
    for (a, b) in system.stacked_rhs().iter().zip(&f) {
        assert!((a + b).abs() < 1e-12);
    }
}

#[test]
fn stacked_system_is_block_diagonal() {
    let case = ieee14();
    let inj = Injections::nominal(&case);
    let topos = vec![Topology::reference(&case), without(&case, &[2]), without(&case, &[9, 12])];
    let sys = cluster_system(&case, &topos, &inj);
    let members: Vec<MemberState> = topos
        .iter()
        .enumerate()
        .map(|(i, t)| member(&case, &sys, i, t, &inj, i as u64))
        .collect();
    let system = assemble_block_system(&sys, &members);
    let dim = sys.layout.dim();
    assert_eq!(system.dim(), 3 * dim);
    assert_eq!(system.offsets(), vec![0, dim, 2 * dim]);

    let full = system.matrix().to_dense();
    for r in 0..3 * dim {
        for c in 0..3 * dim {
            if r / dim != c / dim {
                assert_eq!(full[(r, c)], 0.0);
            }
        }
    }
    let out = pcg_solve(&system, 1e-13, 2000).unwrap();
    for (b, blk) in system.blocks.iter().enumerate() {
        let a = blk.matrix().to_dense();
        let x = a.lu().solve(&DVector::from_column_slice(&blk.rhs)).unwrap();
        let got = &out.x[b * dim..(b + 1) * dim];
        let err = x.iter().zip(got).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10 * x.amax().max(1.0), "block {b}: {err:e}");
    }
}

fn dense_block(a: &DMatrix<f64>, rhs: &[f64], preconditioner: Preconditioner) -> Block {
    let n = a.nrows();
    let mut t = TripletBuilder::new(n, n);
    for r in 0..n {
        for c in 0..n {
            if a[(r, c)] != 0.0 {
                t.push(r, c, a[(r, c)]);
            }
        }
    }
    let m = t.build();
    Block {
        pattern: m.pattern().clone(),
        values: m.values().to_vec(),
        rhs: rhs.to_vec(),
        tol: 1e-12,
        preconditioner,
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, symmetric: bool) -> DMatrix<f64> {
    let mut a = DMatrix::from_fn(n, n, |_, _| if rng.random_bool(0.3) { rng.random_range(-1.0..1.0) } else { 0.0 });
    if symmetric {
        a = &a * a.transpose();
    }
    for i in 0..n {
        a[(i, i)] += n as f64 * 0.5;
    }
    a
}

#[test]
fn identity_block_takes_one_iteration() {
    let b = dense_block(&DMatrix::identity(7, 7), &[1.0, -2.0, 3.0, 0.5, 0.0, 4.0, -1.0], Preconditioner::Jacobi);
    let out = pcg_solve(&BlockSystem { blocks: vec![b.clone()] }, 1e-12, 50).unwrap();
    assert_eq!(out.blocks[0].iterations, 1);
    assert_eq!(out.x, b.rhs);
}

#[test]
fn diagonal_block_takes_one_iteration() {
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0, 0.25, 9.0]));
    let b = dense_block(&a, &[1.0, 1.0, 1.0, 1.0], Preconditioner::Jacobi);
    let out = pcg_solve(&BlockSystem { blocks: vec![b] }, 1e-12, 50).unwrap();
    assert_eq!(out.blocks[0].iterations, 1);
    for (x, d) in out.x.iter().zip([2.0, 5.0, 0.25, 9.0]) {
        assert!((x - 1.0 / d).abs() < 1e-15);
    }
}

#[test]
fn exact_inverse_preconditioner_takes_one_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_matrix(&mut rng, 20, false);
    let inv = a.clone().try_inverse().unwrap();
    let rhs: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b = dense_block(&a, &rhs, Preconditioner::Inverse(Arc::new(inv)));
    let out = pcg_solve(&BlockSystem { blocks: vec![b] }, 1e-10, 50).unwrap();
    assert_eq!(out.blocks[0].iterations, 1);
}

#[test]
fn rejects_nonpositive_tolerance() {
    let b = dense_block(&DMatrix::identity(2, 2), &[1.0, 1.0], Preconditioner::Jacobi);
    assert_eq!(pcg_solve(&BlockSystem { blocks: vec![b] }, 0.0, 5), Err(PcgError::BadTolerance));
}

#[test]
fn stagnation_names_the_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let easy = dense_block(&DMatrix::identity(3, 3), &[1.0, 2.0, 3.0], Preconditioner::Jacobi);
    let a = random_matrix(&mut rng, 30, false);
    let hard = dense_block(&a, &vec![1.0; 30], Preconditioner::Jacobi);
    match pcg_solve(&BlockSystem { blocks: vec![easy, hard] }, 1e-14, 2) {
        Err(PcgError::Stagnation { block, .. }) => assert_eq!(block, 1),
        other => panic!("expected stagnation, got {other:?}"),
    }
}

#[test]
fn zero_rhs_returns_zero() {
    let b = dense_block(&DMatrix::identity(3, 3), &[0.0; 3], Preconditioner::Jacobi);
    let out = pcg_solve(&BlockSystem { blocks: vec![b] }, 1e-12, 5).unwrap();
    assert_eq!(out.x, vec![0.0; 3]);
    assert_eq!(out.blocks[0].iterations, 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pcg_matches_dense_solve(seed in any::<u64>(), n in 2usize..30, symmetric in any::<bool>(), inverse in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, n, symmetric);
        let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pre = if inverse {
            // a perturbed inverse, like a Jacobian from a nearby state
            let near = &a + DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.05..0.05));
            Preconditioner::Inverse(Arc::new(near.try_inverse().unwrap()))
        } else {
            Preconditioner::Jacobi
        };
        let out = pcg_solve(&BlockSystem { blocks: vec![dense_block(&a, &rhs, pre)] }, 1e-13, 10 * n).unwrap();
        let x = a.clone().lu().solve(&DVector::from_column_slice(&rhs)).unwrap();
        let err = x.iter().zip(&out.x).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-8, "err {err:e}");
    }

    #[test]
    fn residual_never_increases(seed in any::<u64>(), n in 2usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, n, false);
        let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let blk = dense_block(&a, &rhs, Preconditioner::Jacobi);
        let mut last = f64::INFINITY;
        for k in 1..=n {
            let out = pcg_solve_blocks(&BlockSystem { blocks: vec![blk.clone()] }, k);
            let r = out.blocks[0].relative_residual;
            prop_assert!(r <= last * (1.0 + 1e-9) + 1e-15, "step {k}: {r:e} > {last:e}");
            last = r;
        }
    }
}

fn max_state_gap(a: &crate::powerflow::PowerFlowSolution, b: &crate::powerflow::PowerFlowSolution) -> f64 {
    let vm = a.state.vm.iter().zip(&b.state.vm).map(|(x, y)| (x - y).abs());
    let va = a.state.va.iter().zip(&b.state.va).map(|(x, y)| (x - y).abs());
    vm.chain(va).fold(0.0, f64::max)
}

#[test]
fn batch_of_one_matches_sequential() {
    let case = ieee14();
    let inj = Injections::nominal(&case);
    let topo = without(&case, &[4]);
    let opts = SolverOptions::default();
    let seq = solve_newton_raphson(&case, &topo, &inj, &opts).unwrap();
    let batch = batch_solve(&case, &[(topo, inj)], &opts);
    let got = batch[0].as_ref().unwrap();
    assert!(max_state_gap(&seq, got) < 1e-9);
    assert!(got.mismatch_norm < opts.tolerance);
    for (p, q) in seq.lines.p_or.iter().zip(&got.lines.p_or) {
        assert!((p - q).abs() < 1e-6);
    }
}

#[test]
fn ieee118_n1_matches_sequential_in_order() {
    let case = ieee118();
    let inj = Injections::nominal(&case);
    let opts = SolverOptions::default();
    let scenarios: Vec<(Topology, Injections)> = n1(&case).into_iter().map(|t| (t, inj.clone())).collect();
    let report = batch_solve_with(&case, &scenarios, &opts, &BatchOptions::default());
    assert_eq!(report.solutions.len(), 186);
    let mut compared = 0;
    for (i, ((topo, inj), got)) in scenarios.iter().zip(&report.solutions).enumerate() {
        let seq = solve_newton_raphson(&case, topo, inj, &opts);
        match (seq, got) {
            (Ok(s), Ok(b)) => {
                assert!(max_state_gap(&s, b) < 1e-6, "scenario {i}");
                // flows are evaluated on this scenario's own line set
                assert_eq!(b.lines.p_or[i], 0.0);
                compared += 1;
            }
            (Err(PowerFlowError::Topology(_)), Err(PowerFlowError::Topology(_))) => {}
            (s, b) => panic!("scenario {i}: sequential {:?} vs batch {:?}", s.err(), b.as_ref().err()),
        }
    }
    assert!(compared >= 170, "only {compared} comparable scenarios");
    assert_eq!(report.clusters, 1);
}

#[test]
fn islanding_scenarios_are_flagged_not_fatal() {
    let case = ieee118();
    let inj = Injections::nominal(&case);
    let all = n1(&case);
    let island = all
        .iter()
        .position(|t| !validate_topology(&case, t).is_valid())
        .expect("some single outage islands a bus");
    let scenarios = vec![
        (all[0].clone(), inj.clone()),
        (all[island].clone(), inj.clone()),
        (all[1].clone(), inj.clone()),
    ];
    let out = batch_solve(&case, &scenarios, &SolverOptions::default());
    assert!(out[0].is_ok());
    assert!(matches!(out[1], Err(PowerFlowError::Topology(_))));
    assert!(out[2].is_ok());
}

#[test]
fn mixed_clusters_and_injections() {
    let case = ieee14();
    let nominal = Injections::nominal(&case);
    let mut scaled = nominal.clone();
    scaled.load_p.iter_mut().for_each(|p| *p *= 0.8);
    scaled.prod_p.iter_mut().for_each(|p| *p *= 0.8);
    let scenarios = vec![
        (valid_split(&case, 0), nominal.clone()),
        (without(&case, &[3]), scaled.clone()),
        (Topology::reference(&case), nominal.clone()),
        (valid_split(&case, 1), scaled.clone()),
        (valid_split(&case, 0), scaled),
    ];
    let opts = SolverOptions::default();
    for jacobi in [false, true] {
        let bopts = BatchOptions {
            preconditioner: if jacobi { PreconditionerKind::Jacobi } else { PreconditionerKind::ClusterJacobian },
            jobs: Some(2),
            ..Default::default()
        };
        let report = batch_solve_with(&case, &scenarios, &opts, &bopts);
        assert_eq!(report.clusters, 3);
        for ((topo, inj), got) in scenarios.iter().zip(&report.solutions) {
            let seq = solve_newton_raphson(&case, topo, inj, &opts).unwrap();
            assert!(max_state_gap(&seq, got.as_ref().unwrap()) < 1e-8);
        }
    }
}

#[test]
fn invalid_options_fail_every_entry() {
    let case = ieee14();
    let inj = Injections::nominal(&case);
    let opts = SolverOptions {
        tolerance: -1.0,
        ..Default::default()
    };
    let out = batch_solve(&case, &[(Topology::reference(&case), inj.clone()), (without(&case, &[1]), inj)], &opts);
    assert!(out.iter().all(|r| matches!(r, Err(PowerFlowError::Options(_)))));
}

#[test]
fn empty_batch() {
    let case = ieee14();
    let report = batch_solve_with(&case, &[], &SolverOptions::default(), &BatchOptions::default());
    assert!(report.solutions.is_empty());
    assert_eq!(report.clusters, 0);
}
