//! End-to-end acceptance checks. Each test prints one `criterion N` line.
//! The tests take a shared lock so timings are not disturbed by each other.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gridscreen_core::grid::{
    build_ybus, ieee118, ieee14, validate_topology, Generator, Line, Load, NodeMap, Substation,
};
use gridscreen_core::metrics::{mae, mape_top_quantile, Quantity};
use gridscreen_core::powerflow::jacobian::{phasors, stacked_mismatch, JacobianLayout};
use gridscreen_core::powerflow::NodeSpec;
use gridscreen_core::scenario::{generate_dataset_with, write_dataset, Dataset, GenerateOptions, ScenarioConfig, Split};
use gridscreen_core::scoring::{discretize, speedup_score, Grade, ScoreReport, SplitScore};
use gridscreen_core::sparse::CsrMatrix;
use gridscreen_core::surrogate::{project_predictions, ProjectionCache};
use gridscreen_core::{
    batch_solve, evaluate_ml, evaluate_physics, global_score, solve_newton_raphson, GridCase, Injections,
    PhysicsContext, PhysicsTolerances, PredictionSet, ScoreWeights, SolverOptions, ThresholdTable, Topology,
};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints the criterion line past the test harness capture, then asserts.
fn verdict(n: u32, title: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "criterion {n} {tag}: {title}: {detail}");
    assert!(pass, "criterion {n} ({title}) failed: {detail}");
}

fn desk(split: Split, n: usize) -> (GridCase, Dataset) {
    let case = ieee118();
    let opts = GenerateOptions {
        samples: Some(n),
        ..GenerateOptions::default()
    };
    let ds = generate_dataset_with(&case, &ScenarioConfig::desk(), split, &opts).expect("desk generation");
    (case, ds)
}

#[test]
fn criterion_1_score_reproduction() {
    let _g = serial();
    let w = ScoreWeights::default();
    let t = ThresholdTable::default();
    let (case, test) = desk(Split::Test, 50);
    let (_, ood) = desk(Split::TestOod, 50);

    let start = Instant::now();
    let tol = PhysicsTolerances::default();
    let reports = [&test, &ood].map(|ds| {
        let truth = ds.outputs(&case);
        let (topos, injs) = (ds.topologies(), ds.injections());
        let ctx = PhysicsContext {
            case: &case,
            topologies: &topos,
            injections: &injs,
        };
        (evaluate_ml(&truth, &truth).unwrap(), evaluate_physics(&truth, &ctx, &tol).unwrap())
    });
    let truth = global_score(&reports[0].0, &reports[0].1, &reports[1].0, &reports[1].1, 3.77, &w, &t).unwrap();
    let elapsed = start.elapsed();

    use Grade::{Acceptable as A, Great as G, Unacceptable as U};
    let leap_test = SplitScore::from_grades(vec![G, G, A, A, U, U], vec![G, G, U, U, A, U, U, U], &w).unwrap();
    let leap_ood = SplitScore::from_grades(vec![A, A, A, A, U, U], vec![G, G, U, U, A, U, U, U], &w).unwrap();
    let leap = ScoreReport::from_splits(leap_test, leap_ood, 11.9, &w).unwrap();

    let near = |x: f64, y: f64, tol: f64| (x - y).abs() <= tol;
    let pass = near(truth.global_percent(), 62.5, 0.1)
        && truth.test.combined == 1.0
        && truth.ood.combined == 1.0
        && near(truth.speedup, 0.06, 0.005)
        && near(leap.global_percent(), 37.6, 0.1)
        && near(leap.test.combined, 0.44, 0.005)
        && near(leap.ood.combined, 0.33, 0.005)
        && near(leap.speedup, 0.36, 0.01)
        && elapsed < Duration::from_secs(1);
    verdict(
        1,
        "score reproduction",
        pass,
        format!(
            "truth {:.2}% ({:.2}, {:.2}, {:.3}); grade vectors {:.2}% ({:.3}, {:.3}, {:.3}); scoring took {:.3} s",
            truth.global_percent(),
            truth.test.combined,
            truth.ood.combined,
            truth.speedup,
            leap.global_percent(),
            leap.test.combined,
            leap.ood.combined,
            leap.speedup,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_2_weibull_constant() {
    let _g = serial();
    let a = ScoreWeights::default().weibull_a();
    // independent: the scale where the curve scores 0.1 at a ratio of 5
    let (mut lo, mut hi) = (1.0_f64, 100.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 1.0 - (-(5.0 / mid).powf(1.7)).exp() > 0.1 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let truncated = (a * 100.0).floor() / 100.0;
    let pass = (a - lo).abs() < 1e-9 && truncated == 18.78 && (speedup_score(5.0, &ScoreWeights::default()).unwrap() - 0.1).abs() < 1e-12;
    verdict(2, "Weibull constant", pass, format!("a = {a:.6}, 2 d.p. (truncated) {truncated:.2}, bisection {lo:.6}"));
}

/// Random connected 6-bus grid: ring plus chords, slack, one PV node, loads.
fn six_bus(seed: u64) -> GridCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 6;
    let subs = (0..n)
        .map(|i| Substation {
            name: format!("b{i}"),
            base_kv: 138.0,
            shunt_g_mw: 0.0,
            shunt_b_mvar: if i == 4 { rng.random_range(0.0..10.0) } else { 0.0 },
        })
        .collect();
    let mut lines = Vec::new();
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    edges.extend([(0, 3), (1, 4), (2, 5)].into_iter().filter(|_| rng.random_bool(0.6)));
    for (k, (from, to)) in edges.into_iter().enumerate() {
        lines.push(Line {
            name: format!("l{k}"),
            from,
            to,
            r: rng.random_range(0.005..0.04),
            x: rng.random_range(0.05..0.25),
            b: rng.random_range(0.0..0.04),
            tap: if rng.random_bool(0.3) { rng.random_range(0.95..1.05) } else { 1.0 },
        });
    }
    let gens = vec![
        Generator {
            name: "g0".into(),
            substation: 0,
            p_mw: 0.0,
            v_kv: 138.0 * 1.03,
            slack: true,
        },
        Generator {
            name: "g1".into(),
            substation: 2,
            p_mw: rng.random_range(10.0..60.0),
            v_kv: 138.0 * 1.01,
            slack: false,
        },
    ];
    let loads = [1, 3, 4, 5]
        .into_iter()
        .map(|s| Load {
            name: format!("d{s}"),
            substation: s,
            p_mw: rng.random_range(5.0..40.0),
            q_mvar: rng.random_range(0.0..15.0),
        })
        .collect();
    GridCase::new(100.0, subs, lines, gens, loads).unwrap()
}

/// Largest relative gap between the analytic Jacobian and central differences
/// of the stacked mismatch, at a random state.
fn jacobian_gap(case: &GridCase, seed: u64) -> f64 {
    let topo = Topology::reference(case);
    let y = build_ybus(case, &topo).unwrap();
    let spec = NodeSpec::build(case, &topo, &y.nodes, &Injections::nominal(case)).unwrap();
    let layout = JacobianLayout::new(y.matrix.pattern().clone(), &spec.kinds);
    let n = spec.kinds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vm: Vec<f64> = (0..n).map(|_| rng.random_range(0.92..1.08)).collect();
    let va: Vec<f64> = (0..n).map(|_| rng.random_range(-0.25..0.25)).collect();
    let f = |vm: &[f64], va: &[f64]| {
        let v = phasors(vm, va);
        let i = y.matrix.mul_vec(&v);
        let mut out = vec![0.0; layout.dim()];
        stacked_mismatch(&layout.unknowns, &v, &i, &spec.p, &spec.q, &mut out);
        out
    };
    let v = phasors(&vm, &va);
    let ibus = y.matrix.mul_vec(&v);
    let mut vals = vec![0.0; layout.pattern.nnz()];
    layout.fill(&y.matrix, &v, &ibus, &mut vals);
    let jac = CsrMatrix::new(layout.pattern.clone(), vals).to_dense();
    let mut fd = nalgebra::DMatrix::<f64>::zeros(layout.dim(), layout.dim());
    let h = 1e-6;
    for k in 0..n {
        for (col, angle) in [(layout.unknowns.theta[k], true), (layout.unknowns.vmag[k], false)] {
            let Some(c) = col else { continue };
            let (mut mp, mut ap, mut mm, mut am) = (vm.clone(), va.clone(), vm.clone(), va.clone());
            if angle {
                ap[k] += h;
                am[k] -= h;
            } else {
                mp[k] += h;
                mm[k] -= h;
            }
            let (fp, fm) = (f(&mp, &ap), f(&mm, &am));
            for r in 0..layout.dim() {
                fd[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
    }
    (&jac - &fd).amax() / jac.amax()
}

#[test]
fn criterion_3_solver_correctness() {
    let _g = serial();
    let start = Instant::now();
    let opts = SolverOptions::default();
    let mut details = Vec::new();
    let mut pass = true;
    for (name, case) in [("IEEE-14", ieee14()), ("IEEE-118", ieee118())] {
        match solve_newton_raphson(&case, &Topology::reference(&case), &Injections::nominal(&case), &opts) {
            Ok(s) => {
                pass &= s.mismatch_norm < 1e-8 && s.iterations <= 30;
                details.push(format!("{name} {} it, mismatch {:.1e}", s.iterations, s.mismatch_norm));
            }
            Err(e) => {
                pass = false;
                details.push(format!("{name} {e}"));
            }
        }
    }
    let worst = (0..20).map(|s| jacobian_gap(&six_bus(1000 + s), s)).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    pass &= worst < 1e-6 && elapsed < Duration::from_secs(10);
    details.push(format!("Jacobian vs FD worst relative gap {worst:.1e} over 20 cases"));
    details.push(format!("{:.2} s", elapsed.as_secs_f64()));
    verdict(3, "solver correctness", pass, details.join("; "));
}

#[test]
fn criterion_4_truth_physics() {
    let _g = serial();
    let start = Instant::now();
    let (case, ds) = desk(Split::Test, 1000);
    let truth = ds.outputs(&case);
    let (topos, injs) = (ds.topologies(), ds.injections());
    let ctx = PhysicsContext {
        case: &case,
        topologies: &topos,
        injections: &injs,
    };
    let ph = evaluate_physics(&truth, &ctx, &PhysicsTolerances::default()).unwrap();
    let t = ThresholdTable::default();
    let great = (5..8).all(|i| discretize(ph.values()[i], &t.physics[i]).unwrap() == Grade::Great);
    let elapsed = start.elapsed();
    let pass = ph.p1 == 0.0 && ph.p2 == 0.0 && ph.p3 == 0.0 && ph.p4 == 0.0 && ph.p5 == 0.0 && great && elapsed < Duration::from_secs(60);
    verdict(
        4,
        "physics compliance of truth",
        pass,
        format!(
            "P1-P5 = {:?}, P6 {:.1e}, P7 {:.1e}, P8 {:.1e}, {} redraws, {:.1} s",
            [ph.p1, ph.p2, ph.p3, ph.p4, ph.p5],
            ph.p6,
            ph.p7,
            ph.p8,
            ds.redraws,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_5_batched_equivalence() {
    let _g = serial();
    let start = Instant::now();
    let case = ieee118();
    let opts = SolverOptions::default();
    let reference = Topology::reference(&case);
    let inj = Injections::nominal(&case);
    let scenarios: Vec<(Topology, Injections)> = (0..case.n_lines())
        .map(|l| {
            let mut t = reference.clone();
            t.line_status[l] = false;
            (t, inj.clone())
        })
        .collect();
    let sequential = || -> Vec<_> { scenarios.iter().map(|(t, i)| solve_newton_raphson(&case, t, i, &opts)).collect() };
    let seq = sequential();
    let bat = batch_solve(&case, &scenarios, &opts);

    let mut compared = 0;
    let mut worst: f64 = 0.0;
    for (a, b) in seq.iter().zip(&bat) {
        if let (Ok(a), Ok(b)) = (a, b) {
            assert_eq!(a.state.nodes, b.state.nodes);
            for k in 0..a.state.vm.len() {
                worst = worst.max((a.state.vm[k] - b.state.vm[k]).abs()).max((a.state.va[k] - b.state.va[k]).abs());
            }
            compared += 1;
        }
    }
    // best of three of each, interleaved
    let (mut t_seq, mut t_bat) = (f64::MAX, f64::MAX);
    for _ in 0..3 {
        let t = Instant::now();
        std::hint::black_box(sequential());
        t_seq = t_seq.min(t.elapsed().as_secs_f64());
        let t = Instant::now();
        std::hint::black_box(batch_solve(&case, &scenarios, &opts));
        t_bat = t_bat.min(t.elapsed().as_secs_f64());
    }
    let speedup = t_seq / t_bat;
    let elapsed = start.elapsed();
    let pass = scenarios.len() == 186 && compared > 0 && worst < 1e-6 && speedup >= 2.0 && elapsed < Duration::from_secs(120);
    verdict(
        5,
        "batched vs sequential",
        pass,
        format!(
            "{compared}/186 converged in both, max |Δv|,|Δθ| {worst:.1e} pu; sequential {t_seq:.3} s, batched {t_bat:.3} s, speed-up {speedup:.2}x; {:.1} s",
            elapsed.as_secs_f64()
        ),
    );
}

/// Net injection minus the sum of predicted flows leaving each node, in MW.
fn nodal_residual(case: &GridCase, topo: &Topology, inj: &Injections, p_or: &[f64], p_ex: &[f64]) -> f64 {
    let nodes = NodeMap::from_topology(case, topo);
    let mut bal = vec![0.0; nodes.len()];
    for (g, p) in inj.prod_p.iter().enumerate() {
        if let Some(k) = nodes.node_of(topo, case.generators()[g].substation, case.gen_pos(g)) {
            bal[k] += p;
        }
    }
    for (d, p) in inj.load_p.iter().enumerate() {
        if let Some(k) = nodes.node_of(topo, case.loads()[d].substation, case.load_pos(d)) {
            bal[k] -= p;
        }
    }
    let mut touched = vec![false; nodes.len()];
    for l in 0..case.n_lines() {
        if let Some((k, m)) = nodes.line_nodes(case, topo, l) {
            bal[k] -= p_or[l];
            bal[m] -= p_ex[l];
            touched[k] = true;
            touched[m] = true;
        }
    }
    bal.iter().zip(&touched).filter(|(_, &t)| t).map(|(b, _)| b.abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_6_kkt_projection() {
    let _g = serial();
    let start = Instant::now();
    let case = ieee14();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let reference = Topology::reference(&case);
    let nominal = Injections::nominal(&case);
    let mut topos = Vec::new();
    let mut injs = Vec::new();
    while topos.len() < 100 {
        let mut t = reference.clone();
        if rng.random_bool(0.7) {
            t.line_status[rng.random_range(0..case.n_lines())] = false;
        }
        if !validate_topology(&case, &t).is_valid() {
            continue;
        }
        let scale = rng.random_range(0.8..1.2);
        let mut i = nominal.clone();
        i.load_p.iter_mut().for_each(|p| *p *= scale);
        i.prod_p.iter_mut().for_each(|p| *p *= scale);
        topos.push(t);
        injs.push(i);
    }
    let n = case.n_lines();
    let mut pred = PredictionSet::new(n, &Quantity::ALL);
    for _ in 0..100 {
        let mut f = gridscreen_core::powerflow::LineFlows::zeros(n);
        for l in 0..n {
            f.p_or[l] = rng.random_range(-150.0..150.0);
            f.p_ex[l] = rng.random_range(-150.0..150.0);
            f.q_or[l] = rng.random_range(-50.0..50.0);
            f.q_ex[l] = rng.random_range(-50.0..50.0);
            f.v_or[l] = rng.random_range(10.0..140.0);
            f.v_ex[l] = rng.random_range(10.0..140.0);
            f.a_or[l] = rng.random_range(1.0..900.0);
            f.a_ex[l] = rng.random_range(1.0..900.0);
        }
        pred.push_flows(&f);
    }
    let cache = ProjectionCache::new();
    let (once, _) = project_predictions(&pred, &case, &topos, &injs, &cache).unwrap();
    let (twice, _) = project_predictions(&once, &case, &topos, &injs, &cache).unwrap();

    let mut residual: f64 = 0.0;
    for i in 0..100 {
        let (po, pe) = (once.row(Quantity::POr, i).unwrap(), once.row(Quantity::PEx, i).unwrap());
        residual = residual.max(nodal_residual(&case, &topos[i], &injs[i], po, pe));
    }
    let idempotence = [Quantity::POr, Quantity::PEx]
        .iter()
        .flat_map(|&q| once.column(q).unwrap().iter().zip(twice.column(q).unwrap()))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let ctx = PhysicsContext {
        case: &case,
        topologies: &topos,
        injections: &injs,
    };
    let p7 = evaluate_physics(&once, &ctx, &PhysicsTolerances::default()).unwrap().p7;
    let elapsed = start.elapsed();
    let pass = residual < 1e-10 && idempotence < 1e-12 && p7 <= 1e-6 && elapsed < Duration::from_secs(5);
    verdict(
        6,
        "KKT projection",
        pass,
        format!(
            "max residual {residual:.1e} MW, idempotence {idempotence:.1e}, P7 {p7:.1e}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    );
}

/// Hop distances between substations over every line of the case.
fn hops(case: &GridCase) -> Vec<Vec<usize>> {
    let n = case.n_substations();
    let mut adj = vec![Vec::new(); n];
    for l in case.lines() {
        adj[l.from].push(l.to);
        adj[l.to].push(l.from);
    }
    (0..n)
        .map(|s| {
            let mut d = vec![usize::MAX; n];
            d[s] = 0;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &v in &adj[u] {
                    if d[v] == usize::MAX {
                        d[v] = d[u] + 1;
                        q.push_back(v);
                    }
                }
            }
            d
        })
        .collect()
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn criterion_7_generator_calibration() {
    let _g = serial();
    let start = Instant::now();
    let cfg = ScenarioConfig::desk();
    let (case, train) = desk(Split::Train, 10_000);
    let zero = train.samples.iter().filter(|s| s.scenario.disconnected.is_empty()).count() as f64 / 10_000.0;
    let single = train.samples.iter().all(|s| s.scenario.disconnected.len() <= 1);

    let (_, test) = desk(Split::Test, 1000);
    let test_ok = test.samples.iter().all(|s| s.scenario.disconnected.len() == 1 && s.scenario.topology.disconnected_lines() == s.scenario.disconnected);

    let (_, ood) = desk(Split::TestOod, 1000);
    let d = hops(&case);
    let max_hops = cfg.test_ood.region.as_ref().map_or(1, |r| r.hops);
    let near = |a: usize, b: usize| {
        let (la, lb) = (&case.lines()[a], &case.lines()[b]);
        [la.from, la.to].iter().any(|&x| [lb.from, lb.to].iter().any(|&y| d[x][y] <= max_hops))
    };
    let ood_ok = ood.samples.iter().all(|s| {
        let l = &s.scenario.disconnected;
        l.len() == 2 && l[0] != l[1] && near(l[0], l[1]) && s.scenario.topology.disconnected_lines() == *l
    });

    let dir = tempfile::tempdir().unwrap();
    let (_, a) = desk(Split::Test, 200);
    let (_, b) = desk(Split::Test, 200);
    write_dataset(&dir.path().join("a"), &a, &case).unwrap();
    write_dataset(&dir.path().join("b"), &b, &case).unwrap();
    let identical = dir_bytes(&dir.path().join("a")) == dir_bytes(&dir.path().join("b"));

    let elapsed = start.elapsed();
    let pass = (zero - 0.30).abs() <= 0.02 && single && test_ok && ood_ok && identical && elapsed < Duration::from_secs(600);
    verdict(
        7,
        "scenario generator calibration",
        pass,
        format!(
            "train zero-disconnection fraction {zero:.4} ({} redraws); test exactly 1: {test_ok}; OOD exactly 2 in region: {ood_ok}; byte-identical: {identical}; {:.1} s",
            train.redraws,
            elapsed.as_secs_f64()
        ),
    );
}

/// k-th smallest value by counting, no sorting.
fn order_statistic(xs: &[f64], k: usize) -> f64 {
    for &x in xs {
        let below = xs.iter().filter(|&&y| y < x).count();
        let upto = xs.iter().filter(|&&y| y <= x).count();
        if below <= k && k < upto {
            return x;
        }
    }
    unreachable!("k within range")
}

/// MAPE over the entries whose |truth| reaches the linear-interpolation
/// quantile at `level`, enumerated term by term.
fn brute_mape(pred: &[f64], truth: &[f64], level: f64) -> f64 {
    let mags: Vec<f64> = truth.iter().map(|t| t.abs()).collect();
    let h = (mags.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let lo_v = order_statistic(&mags, lo);
    let hi_v = if lo + 1 < mags.len() { order_statistic(&mags, lo + 1) } else { lo_v };
    let cut = lo_v + (h - lo as f64) * (hi_v - lo_v);
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..truth.len() {
        if mags[i] >= cut && truth[i] != 0.0 {
            sum += ((pred[i] - truth[i]) / truth[i]).abs();
            count += 1;
        }
    }
    sum / count as f64
}

#[test]
fn criterion_8_metric_oracle() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(2..300);
        let truth: Vec<f64> = (0..n)
            .map(|_| match rng.random_range(0..10) {
                0 => 0.0,
                1 => 42.0,
                _ => rng.random_range(-500.0..500.0),
            })
            .collect();
        let pred: Vec<f64> = truth.iter().map(|t| t * rng.random_range(0.8..1.2) + rng.random_range(-1.0..1.0)).collect();
        if truth.iter().all(|&t| t == 0.0) {
            continue;
        }
        let m90 = mape_top_quantile(&pred, &truth, 0.1).unwrap().value;
        let m10 = mape_top_quantile(&pred, &truth, 0.9).unwrap().value;
        let abs = mae(&pred, &truth).unwrap();
        let brute_abs = pred.iter().zip(&truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n as f64;
        worst = worst
            .max((m90 - brute_mape(&pred, &truth, 0.9)).abs())
            .max((m10 - brute_mape(&pred, &truth, 0.1)).abs())
            .max((abs - brute_abs).abs());
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-12 && elapsed < Duration::from_secs(1);
    verdict(8, "metric oracle equivalence", pass, format!("max gap {worst:.1e} over 50 pairs, {:.3} s", elapsed.as_secs_f64()));
}
