use std::time::{Duration, Instant};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use std::sync::Arc;

use super::pcg::{pcg_solve_blocks, Block, BlockSystem, Preconditioner};
use super::{cluster_scenarios, ClusterBase, ContingencyError, DeltaAdmittance, ScenarioCluster};
use crate::grid::{validate_topology, GridCase, Topology};
use crate::powerflow::jacobian::{phasors, stacked_mismatch, JacobianLayout};
use crate::powerflow::{
    apply_step, compute_line_flows_with_factor, dense_solve, generator_outputs_from_currents,
    initial_angles, max_abs, solve_newton_raphson, Initializer, Injections, NodeSpec, NodeState,
    PowerFlowError, PowerFlowSolution, SolverOptions,
};
use crate::sparse::{CsrMatrix, TripletBuilder};

/// How block systems are preconditioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreconditionerKind {
    /// Inverse column norms of each block.
    Jacobi,
    /// Inverse of the cluster base Jacobian at the base solution, shared by
    /// every member and iteration of the cluster.
    #[default]
    ClusterJacobian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOptions {
    pub preconditioner: PreconditionerKind,
    /// Inner relative residual is `factor × outer mismatch norm`, clamped
    /// to `[inner_tol_floor, inner_tol_cap]`.
    pub inner_tol_factor: f64,
    pub inner_tol_cap: f64,
    pub inner_tol_floor: f64,
    pub pcg_max_iter: usize,
    /// Solve stagnated blocks with a dense LU instead of failing them.
    pub dense_fallback: bool,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            preconditioner: PreconditionerKind::default(),
            inner_tol_factor: 1e-2,
            inner_tol_cap: 1e-1,
            inner_tol_floor: 1e-12,
            pcg_max_iter: 400,
            dense_fallback: true,
            jobs: None,
        }
    }
}

impl BatchOptions {
    fn inner_tol(&self, outer: f64) -> f64 {
        (self.inner_tol_factor * outer).clamp(self.inner_tol_floor, self.inner_tol_cap)
    }
}

/// Wall-clock per phase, summed over clusters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchTiming {
    #[serde(with = "secs")]
    pub assembly: Duration,
    #[serde(with = "secs")]
    pub linear_solves: Duration,
    #[serde(with = "secs")]
    pub post_processing: Duration,
    #[serde(with = "secs")]
    pub total: Duration,
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone)]
pub struct BatchReport {
    /// One entry per input scenario, in input order.
    pub solutions: Vec<Result<PowerFlowSolution, PowerFlowError>>,
    pub timing: BatchTiming,
    pub clusters: usize,
    pub pcg_iterations: usize,
    pub dense_fallbacks: usize,
}

/// Shared structures of one cluster.
#[derive(Debug, Clone)]
pub struct ClusterSystem {
    pub cluster: ScenarioCluster,
    pub base: ClusterBase,
    pub layout: JacobianLayout,
    pub preconditioner: Preconditioner,
}

/// Newton iterate of one cluster member.
#[derive(Debug, Clone)]
pub struct MemberState {
    pub scenario: usize,
    pub delta: DeltaAdmittance,
    pub spec: NodeSpec,
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
}

impl ClusterSystem {
    pub fn new(case: &GridCase, cluster: ScenarioCluster, sample: &Topology, inj: &Injections) -> Result<Self, PowerFlowError> {
        let base = ClusterBase::new(case, &cluster).map_err(|e| match e {
            ContingencyError::Ybus(y) => PowerFlowError::Ybus(y),
            other => PowerFlowError::Assembly(other.to_string()),
        })?;
        let spec = NodeSpec::build(case, sample, &cluster.nodes, inj)?;
        let layout = JacobianLayout::new(base.y.matrix.pattern().clone(), &spec.kinds);
        Ok(Self {
            cluster,
            base,
            layout,
            preconditioner: Preconditioner::Jacobi,
        })
    }

    /// Factors the base Jacobian at the solved base topology. Keeps Jacobi
    /// when the base case does not solve or its Jacobian is singular.
    pub fn with_cluster_preconditioner(mut self, case: &GridCase, inj: &Injections, opts: &SolverOptions) -> Self {
        let Ok(sol) = solve_newton_raphson(case, &self.cluster.base_topology, inj, opts) else {
            return self;
        };
        if sol.state.nodes != self.cluster.nodes {
            return self;
        }
        let v = sol.state.phasors();
        let ibus = self.base.y.matrix.mul_vec(&v);
        let mut jac = vec![0.0; self.layout.pattern.nnz()];
        self.layout.fill(&self.base.y.matrix, &v, &ibus, &mut jac);
        let dense = CsrMatrix::new(self.layout.pattern.clone(), jac).to_dense();
        if let Some(inv) = dense.try_inverse() {
            if inv.iter().all(|x| x.is_finite()) {
                self.preconditioner = Preconditioner::Inverse(Arc::new(inv));
            }
        }
        self
    }

    /// `I = Y_base V + ΔY V`.
    fn currents(&self, delta: &DeltaAdmittance, v: &[Complex64]) -> (Vec<Complex64>, Vec<(usize, Complex64)>) {
        let mut ibus = self.base.y.matrix.mul_vec(v);
        let di = delta.currents(v);
        for &(r, c) in &di {
            ibus[r] += c;
        }
        (ibus, di)
    }

    /// Mismatch and Jacobian values of a member at its current iterate.
    fn newton_system(&self, m: &MemberState, tuples: &[(usize, usize, usize, Complex64)]) -> (Vec<f64>, Vec<f64>) {
        let v = phasors(&m.vm, &m.va);
        let (ibus, di) = self.currents(&m.delta, &v);
        let mut f = vec![0.0; self.layout.dim()];
        stacked_mismatch(&self.layout.unknowns, &v, &ibus, &m.spec.p, &m.spec.q, &mut f);
        let mut jac = vec![0.0; self.layout.pattern.nnz()];
        let base_i = self.base.y.matrix.mul_vec(&v);
        self.layout.fill(&self.base.y.matrix, &v, &base_i, &mut jac);
        self.layout.add_delta(tuples, &v, &di, &mut jac);
        (f, jac)
    }

    /// Materialized member admittance on the base pattern.
    pub fn member_matrix(&self, delta: &DeltaAdmittance) -> CsrMatrix<Complex64> {
        let mut m = self.base.y.matrix.clone();
        for e in &delta.entries {
            m.values_mut()[e.pos] += e.value;
        }
        m
    }

    /// DC angles of a member by conjugate gradients on the reduced
    /// susceptance matrix `B_base − ΔB`.
    fn dc_angles(&self, case: &GridCase, m: &MemberState, topo: &Topology) -> Result<Vec<f64>, PowerFlowError> {
        let n = self.cluster.nodes.len();
        let slack = m.spec.slack;
        let mut t = TripletBuilder::with_capacity(n, n, 4 * self.base.lines.len() + n);
        for k in 0..n {
            t.push(k, k, 0.0);
        }
        for &(l, k, mm) in &self.base.lines {
            let line = &case.lines()[l];
            if !topo.line_status[l] || line.x == 0.0 {
                continue;
            }
            let s = 1.0 / (line.x * line.tap);
            t.push(k, k, s);
            t.push(mm, mm, s);
            t.push(k, mm, -s);
            t.push(mm, k, -s);
        }
        let b = t.build();
        let mut rhs = m.spec.p.clone();
        rhs[slack] = 0.0;
        let theta = dirichlet_cg(&b, &rhs, slack, 1e-10, 10 * n).ok_or(PowerFlowError::SingularDc)?;
        Ok(theta)
    }
}

/// Jacobi-preconditioned CG on a symmetric positive semidefinite matrix
/// with one pinned (zero) unknown.
fn dirichlet_cg(b: &CsrMatrix<f64>, rhs: &[f64], pinned: usize, tol: f64, max_iter: usize) -> Option<Vec<f64>> {
    let n = rhs.len();
    let pat = b.pattern();
    let mut diag = vec![1.0; n];
    for (r, d) in diag.iter_mut().enumerate() {
        let v = b.get(r, r);
        if v > 0.0 {
            *d = v;
        }
    }
    let apply = |x: &[f64], out: &mut [f64]| {
        for r in 0..n {
            if r == pinned {
                out[r] = 0.0;
                continue;
            }
            let mut acc = 0.0;
            for p in pat.row_range(r) {
                let c = pat.col_idx()[p];
                if c != pinned {
                    acc += b.values()[p] * x[c];
                }
            }
            out[r] = acc;
        }
    };
    let dot = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    r[pinned] = 0.0;
    let b_norm = dot(&r, &r).sqrt();
    if b_norm == 0.0 {
        return Some(x);
    }
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    for _ in 0..max_iter {
        apply(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return None;
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        if dot(&r, &r).sqrt() < tol * b_norm {
            return Some(x);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Stacks the Newton systems `J dx = −F` of the given members.
pub fn assemble_block_system(sys: &ClusterSystem, members: &[MemberState]) -> BlockSystem {
    let blocks = members
        .iter()
        .map(|m| {
            let tuples = m.delta.as_tuples();
            let (f, jac) = sys.newton_system(m, &tuples);
            Block {
                pattern: sys.layout.pattern.clone(),
                values: jac,
                rhs: f.iter().map(|x| -x).collect(),
                tol: 1e-10,
                preconditioner: sys.preconditioner.clone(),
            }
        })
        .collect();
    BlockSystem { blocks }
}

/// Solves every scenario; failures are reported per entry.
pub fn batch_solve(
    case: &GridCase,
    scenarios: &[(Topology, Injections)],
    opts: &SolverOptions,
) -> Vec<Result<PowerFlowSolution, PowerFlowError>> {
    batch_solve_with(case, scenarios, opts, &BatchOptions::default()).solutions
}

pub fn batch_solve_with(
    case: &GridCase,
    scenarios: &[(Topology, Injections)],
    opts: &SolverOptions,
    bopts: &BatchOptions,
) -> BatchReport {
    let run = || batch_inner(case, scenarios, opts, bopts);
    match bopts.jobs {
        Some(j) => match rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        },
        None => run(),
    }
}

struct Totals {
    timing: BatchTiming,
    pcg_iterations: usize,
    fallbacks: usize,
}

fn batch_inner(
    case: &GridCase,
    scenarios: &[(Topology, Injections)],
    opts: &SolverOptions,
    bopts: &BatchOptions,
) -> BatchReport {
    let start = Instant::now();
    let mut solutions: Vec<Option<Result<PowerFlowSolution, PowerFlowError>>> = vec![None; scenarios.len()];
    let mut totals = Totals {
        timing: BatchTiming::default(),
        pcg_iterations: 0,
        fallbacks: 0,
    };

    let t = Instant::now();
    let mut valid = Vec::new();
    for (i, (topo, inj)) in scenarios.iter().enumerate() {
        let check = opts
            .validate()
            .and_then(|_| inj.validate(case))
            .and_then(|_| validate_topology(case, topo).into_result().map_err(PowerFlowError::from));
        match check {
            Ok(()) => valid.push(i),
            Err(e) => solutions[i] = Some(Err(e)),
        }
    }
    let topos: Vec<Topology> = valid.iter().map(|&i| scenarios[i].0.clone()).collect();
    let clusters = cluster_scenarios(case, &topos);
    totals.timing.assembly += t.elapsed();
    let n_clusters = clusters.len();

    for mut cluster in clusters {
        cluster.members = cluster.members.iter().map(|&j| valid[j]).collect();
        for (i, r) in solve_cluster(case, scenarios, cluster, opts, bopts, &mut totals) {
            solutions[i] = Some(r);
        }
    }
    totals.timing.total = start.elapsed();
    BatchReport {
        solutions: solutions
            .into_iter()
            .map(|s| s.expect("every scenario is answered"))
            .collect(),
        timing: totals.timing,
        clusters: n_clusters,
        pcg_iterations: totals.pcg_iterations,
        dense_fallbacks: totals.fallbacks,
    }
}

type Answer = (usize, Result<PowerFlowSolution, PowerFlowError>);

fn solve_cluster(
    case: &GridCase,
    scenarios: &[(Topology, Injections)],
    cluster: ScenarioCluster,
    opts: &SolverOptions,
    bopts: &BatchOptions,
    totals: &mut Totals,
) -> Vec<Answer> {
    let t = Instant::now();
    let first = cluster.members[0];
    let members = cluster.members.clone();
    let sys = match ClusterSystem::new(case, cluster, &scenarios[first].0, &scenarios[first].1) {
        Ok(s) if bopts.preconditioner == PreconditionerKind::ClusterJacobian => {
            s.with_cluster_preconditioner(case, &scenarios[first].1, opts)
        }
        Ok(s) => s,
        Err(e) => {
            totals.timing.assembly += t.elapsed();
            return scenarios_err(&members, e);
        }
    };
    let mut answers: Vec<Answer> = Vec::new();
    let prepared: Vec<Result<MemberState, (usize, PowerFlowError)>> = sys
        .cluster
        .members
        .par_iter()
        .map(|&i| prepare_member(case, &sys, scenarios, i, opts).map_err(|e| (i, e)))
        .collect();
    let mut active: Vec<(MemberState, Vec<(usize, usize, usize, Complex64)>)> = Vec::new();
    for p in prepared {
        match p {
            Ok(m) => {
                let tuples = m.delta.as_tuples();
                active.push((m, tuples));
            }
            Err((i, e)) => answers.push((i, Err(e))),
        }
    }
    totals.timing.assembly += t.elapsed();

    let mut converged: Vec<(MemberState, usize, f64)> = Vec::new();
    for iteration in 1..=opts.max_iterations {
        if active.is_empty() {
            break;
        }
        let t = Instant::now();
        let systems: Vec<(Vec<f64>, Vec<f64>, f64)> = active
            .par_iter()
            .map(|(m, tuples)| {
                let (f, jac) = sys.newton_system(m, tuples);
                let norm = max_abs(&f);
                (f, jac, norm)
            })
            .collect();
        let mut still = Vec::with_capacity(active.len());
        let mut blocks = Vec::with_capacity(active.len());
        let mut rhs_f = Vec::with_capacity(active.len());
        for ((m, tuples), (f, jac, norm)) in active.drain(..).zip(systems) {
            if norm < opts.tolerance {
                converged.push((m, iteration, norm));
            } else if !norm.is_finite() || iteration == opts.max_iterations {
                answers.push((
                    m.scenario,
                    Err(PowerFlowError::NonConvergence {
                        iterations: opts.max_iterations,
                        mismatch: norm,
                    }),
                ));
            } else {
                blocks.push(Block {
                    pattern: sys.layout.pattern.clone(),
                    values: jac,
                    rhs: f.iter().map(|x| -x).collect(),
                    tol: bopts.inner_tol(norm),
                    preconditioner: sys.preconditioner.clone(),
                });
                rhs_f.push(f);
                still.push((m, tuples));
            }
        }
        totals.timing.assembly += t.elapsed();
        if still.is_empty() {
            break;
        }

        let t = Instant::now();
        let system = BlockSystem { blocks };
        let outcome = pcg_solve_blocks(&system, bopts.pcg_max_iter);
        let offsets = system.offsets();
        let dim = sys.layout.dim();
        for (b, ((m, tuples), rep)) in still.into_iter().zip(&outcome.blocks).enumerate() {
            totals.pcg_iterations += rep.iterations;
            let mut m = m;
            let dx: Option<Vec<f64>> = if rep.converged {
                Some(outcome.x[offsets[b]..offsets[b] + dim].to_vec())
            } else if bopts.dense_fallback {
                totals.fallbacks += 1;
                dense_solve(&sys.layout, &system.blocks[b].values, &rhs_f[b])
            } else {
                // the best CGLS iterate still reduces the residual
                Some(outcome.x[offsets[b]..offsets[b] + dim].to_vec())
            };
            match dx {
                Some(dx) => {
                    apply_step(&sys.layout.unknowns, &dx, &mut m.vm, &mut m.va);
                    active.push((m, tuples));
                }
                None => answers.push((m.scenario, Err(PowerFlowError::SingularJacobian { iteration }))),
            }
        }
        totals.timing.linear_solves += t.elapsed();
    }

    let t = Instant::now();
    let finished: Vec<Answer> = converged
        .into_par_iter()
        .map(|(m, iterations, norm)| {
            let (topo, inj) = &scenarios[m.scenario];
            let v = phasors(&m.vm, &m.va);
            let (ibus, _) = sys.currents(&m.delta, &v);
            let generators = generator_outputs_from_currents(case, &m.spec, inj, &v, &ibus);
            let state = NodeState {
                nodes: sys.cluster.nodes.clone(),
                kinds: m.spec.kinds.clone(),
                vm: m.vm,
                va: m.va,
            };
            let lines = compute_line_flows_with_factor(case, topo, &state, opts.current_phase_factor);
            (
                m.scenario,
                Ok(PowerFlowSolution {
                    state,
                    lines,
                    generators,
                    iterations,
                    mismatch_norm: norm,
                }),
            )
        })
        .collect();
    answers.extend(finished);
    totals.timing.post_processing += t.elapsed();
    answers
}

fn scenarios_err(ids: &[usize], e: PowerFlowError) -> Vec<Answer> {
    ids.iter().map(|&i| (i, Err(e.clone()))).collect()
}

fn prepare_member(
    case: &GridCase,
    sys: &ClusterSystem,
    scenarios: &[(Topology, Injections)],
    i: usize,
    opts: &SolverOptions,
) -> Result<MemberState, PowerFlowError> {
    let (topo, inj) = &scenarios[i];
    let delta = sys
        .base
        .delta(case, i, topo)
        .map_err(|e| PowerFlowError::Assembly(e.to_string()))?;
    let spec = NodeSpec::build(case, topo, &sys.cluster.nodes, inj)?;
    let vm = spec.initial_magnitudes();
    let mut m = MemberState {
        scenario: i,
        delta,
        spec,
        vm,
        va: Vec::new(),
    };
    m.va = match &opts.initializer {
        Initializer::DcWarmStart => sys.dc_angles(case, &m, topo)?,
        other => initial_angles(case, topo, inj, &sys.cluster.nodes, &m.spec, other)?,
    };
    Ok(m)
}
