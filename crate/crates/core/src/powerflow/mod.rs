//! AC power flow by Newton-Raphson, line quantities and the DC approximation.
//!
//! Mismatches follow the usual `S_calc − S_spec` convention: a node drawing
//! more power than it injects has a negative specified injection.

mod dc;
mod export;
mod flows;
pub mod jacobian;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{
    build_ybus, validate_topology, AdmittanceMatrix, GridCase, InvalidTopology, NodeMap, Topology,
    YbusError,
};

pub use dc::{dc_angles, dc_power_flow, DcSolution};
pub use export::{write_line_csv, write_node_csv, LINE_COLUMNS, NODE_COLUMNS};
pub use flows::{compute_line_flows, compute_line_flows_with_factor, LineFlows};
use jacobian::{phasors, stacked_mismatch, JacobianLayout};

/// Three-phase line-to-line convention for currents.
pub const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Per-sample injections in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injections {
    /// Generator active power setpoints (MW). The slack entry is ignored by
    /// the solver.
    pub prod_p: Vec<f64>,
    /// Generator voltage setpoints (kV).
    pub prod_v: Vec<f64>,
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
}

impl Injections {
    /// The setpoints stored in the case itself.
    pub fn nominal(case: &GridCase) -> Self {
        Self {
            prod_p: case.generators().iter().map(|g| g.p_mw).collect(),
            prod_v: case.generators().iter().map(|g| g.v_kv).collect(),
            load_p: case.loads().iter().map(|l| l.p_mw).collect(),
            load_q: case.loads().iter().map(|l| l.q_mvar).collect(),
        }
    }

    pub fn validate(&self, case: &GridCase) -> Result<(), PowerFlowError> {
        let (ng, nl) = (case.generators().len(), case.loads().len());
        if self.prod_p.len() != ng
            || self.prod_v.len() != ng
            || self.load_p.len() != nl
            || self.load_q.len() != nl
        {
            return Err(PowerFlowError::Injections(format!(
                "expected {ng} generators and {nl} loads, got prod {}/{} and load {}/{}",
                self.prod_p.len(),
                self.prod_v.len(),
                self.load_p.len(),
                self.load_q.len()
            )));
        }
        if let Some(i) = self.prod_v.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(PowerFlowError::Injections(format!(
                "generator {i} voltage setpoint {} is not positive",
                self.prod_v[i]
            )));
        }
        let all = self.prod_p.iter().chain(&self.load_p).chain(&self.load_q);
        if all.clone().any(|x| !x.is_finite()) {
            return Err(PowerFlowError::Injections("non-finite injection".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Slack,
    Pv,
    Pq,
}

/// Voltages of every energized node, in per-unit and radians.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub nodes: NodeMap,
    pub kinds: Vec<NodeKind>,
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
}

impl NodeState {
    pub fn phasors(&self) -> Vec<Complex64> {
        phasors(&self.vm, &self.va)
    }

    /// `|V|` of every node in kV.
    pub fn vm_kv(&self, case: &GridCase) -> Vec<f64> {
        self.nodes
            .nodes()
            .iter()
            .zip(&self.vm)
            .map(|(&(sub, _), vm)| vm * case.substations()[sub].base_kv)
            .collect()
    }
}

/// Supplies initial voltage angles, one per node of the given map.
pub trait AnglePredictor: Send + Sync {
    fn predict_angles(
        &self,
        case: &GridCase,
        topo: &Topology,
        inj: &Injections,
        nodes: &NodeMap,
    ) -> Option<Vec<f64>>;
}

/// A fixed angle vector, usable for one topology.
#[derive(Debug, Clone)]
pub struct FixedAngles(pub Vec<f64>);

impl AnglePredictor for FixedAngles {
    fn predict_angles(&self, _: &GridCase, _: &Topology, _: &Injections, nodes: &NodeMap) -> Option<Vec<f64>> {
        (self.0.len() == nodes.len()).then(|| self.0.clone())
    }
}

#[derive(Clone, Default)]
pub enum Initializer {
    /// `θ = 0`, `|V|` at setpoints or 1.
    Flat,
    #[default]
    DcWarmStart,
    External(Arc<dyn AnglePredictor>),
}

impl fmt::Debug for Initializer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Initializer::Flat => f.write_str("Flat"),
            Initializer::DcWarmStart => f.write_str("DcWarmStart"),
            Initializer::External(_) => f.write_str("External(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Largest absolute P/Q mismatch accepted, per-unit.
    pub tolerance: f64,
    /// Cap on mismatch evaluations.
    pub max_iterations: usize,
    pub initializer: Initializer,
    /// `a = |S| / (factor · |V|)`; `√3` for line-to-line voltages.
    pub current_phase_factor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 30,
            initializer: Initializer::DcWarmStart,
            current_phase_factor: SQRT_3,
        }
    }
}

impl SolverOptions {
    pub fn with_initializer(mut self, initializer: Initializer) -> Self {
        self.initializer = initializer;
        self
    }

    pub fn validate(&self) -> Result<(), PowerFlowError> {
        if !(self.tolerance > 0.0) {
            return Err(PowerFlowError::Options("tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(PowerFlowError::Options("max_iterations must be at least 1".into()));
        }
        if !(self.current_phase_factor > 0.0) {
            return Err(PowerFlowError::Options("current phase factor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorOutputs {
    pub p_mw: Vec<f64>,
    pub q_mvar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub state: NodeState,
    pub lines: LineFlows,
    pub generators: GeneratorOutputs,
    /// Number of mismatch evaluations, the last one being below tolerance.
    pub iterations: usize,
    /// Max-abs mismatch of the returned state, per-unit.
    pub mismatch_norm: f64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PowerFlowError {
    #[error("invalid topology: {0}")]
    Topology(#[from] InvalidTopology),
    #[error(transparent)]
    Ybus(#[from] YbusError),
    #[error("invalid injections: {0}")]
    Injections(String),
    #[error("invalid solver options: {0}")]
    Options(String),
    #[error("initializer failed: {0}")]
    Initializer(String),
    #[error("no convergence after {iterations} iterations (mismatch {mismatch:.3e} pu)")]
    NonConvergence { iterations: usize, mismatch: f64 },
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("singular DC susceptance matrix")]
    SingularDc,
    #[error("batch assembly failed: {0}")]
    Assembly(String),
}

/// Specified injections and node classes for one topology.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub kinds: Vec<NodeKind>,
    /// Net specified injection per node, per-unit (generation minus load).
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Voltage setpoint of generator nodes, per-unit (1 elsewhere).
    pub v_set: Vec<f64>,
    pub slack: usize,
    /// Node of every generator and load (`None` if unattached).
    pub gen_node: Vec<Option<usize>>,
    pub load_node: Vec<Option<usize>>,
}

impl NodeSpec {
    /// The first generator listed at a node sets its voltage. The slack
    /// generator's own `P` is excluded from the specified injection.
    pub fn build(
        case: &GridCase,
        topo: &Topology,
        nodes: &NodeMap,
        inj: &Injections,
    ) -> Result<Self, PowerFlowError> {
        let n = nodes.len();
        let base = case.base_mva();
        let mut kinds = vec![NodeKind::Pq; n];
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        let mut v_set = vec![1.0; n];
        let mut has_gen = vec![false; n];
        let mut slack = None;
        let mut gen_node = Vec::with_capacity(case.generators().len());
        for (i, g) in case.generators().iter().enumerate() {
            let node = nodes.node_of(topo, g.substation, case.gen_pos(i));
            gen_node.push(node);
            let Some(k) = node else { continue };
            if !has_gen[k] {
                has_gen[k] = true;
                kinds[k] = NodeKind::Pv;
                v_set[k] = inj.prod_v[i] / case.substations()[g.substation].base_kv;
            }
            if g.slack {
                slack = Some(k);
            } else {
                p[k] += inj.prod_p[i] / base;
            }
        }
        let slack = slack.ok_or_else(|| {
            PowerFlowError::Topology(InvalidTopology::Unattached {
                substation: case.generators()[case.slack_generator()].substation,
                element: crate::grid::ElementRef::Generator(case.slack_generator()),
            })
        })?;
        kinds[slack] = NodeKind::Slack;
        let mut load_node = Vec::with_capacity(case.loads().len());
        for (i, l) in case.loads().iter().enumerate() {
            let node = nodes.node_of(topo, l.substation, case.load_pos(i));
            load_node.push(node);
            if let Some(k) = node {
                p[k] -= inj.load_p[i] / base;
                q[k] -= inj.load_q[i] / base;
            }
        }
        Ok(Self {
            kinds,
            p,
            q,
            v_set,
            slack,
            gen_node,
            load_node,
        })
    }

    /// Initial magnitudes: setpoints at generator nodes, 1 elsewhere.
    pub fn initial_magnitudes(&self) -> Vec<f64> {
        self.kinds
            .iter()
            .zip(&self.v_set)
            .map(|(k, &v)| if *k == NodeKind::Pq { 1.0 } else { v })
            .collect()
    }
}

/// Residual `[ΔP at non-slack nodes, ΔQ at PQ nodes]` of a state, per-unit.
pub fn mismatch(
    case: &GridCase,
    topo: &Topology,
    y: &AdmittanceMatrix,
    state: &NodeState,
    inj: &Injections,
) -> Result<Vec<f64>, PowerFlowError> {
    let spec = NodeSpec::build(case, topo, &y.nodes, inj)?;
    let unknowns = jacobian::UnknownIndex::new(&spec.kinds);
    let v = state.phasors();
    let ibus = y.matrix.mul_vec(&v);
    let mut out = vec![0.0; unknowns.dim];
    stacked_mismatch(&unknowns, &v, &ibus, &spec.p, &spec.q, &mut out);
    Ok(out)
}

pub(crate) fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Initial angles for a topology according to the chosen initializer.
pub fn initial_angles(
    case: &GridCase,
    topo: &Topology,
    inj: &Injections,
    nodes: &NodeMap,
    spec: &NodeSpec,
    initializer: &Initializer,
) -> Result<Vec<f64>, PowerFlowError> {
    match initializer {
        Initializer::Flat => Ok(vec![0.0; nodes.len()]),
        Initializer::DcWarmStart => dc_angles(case, topo, nodes, spec),
        Initializer::External(p) => {
            let angles = p
                .predict_angles(case, topo, inj, nodes)
                .ok_or_else(|| PowerFlowError::Initializer("predictor returned no angles".into()))?;
            if angles.len() != nodes.len() || angles.iter().any(|a| !a.is_finite()) {
                return Err(PowerFlowError::Initializer(format!(
                    "expected {} finite angles, got {}",
                    nodes.len(),
                    angles.len()
                )));
            }
            let shift = angles[spec.slack];
            Ok(angles.iter().map(|a| a - shift).collect())
        }
    }
}

/// Applies a Newton step `[Δθ, Δ|V|]` in place.
pub(crate) fn apply_step(unknowns: &jacobian::UnknownIndex, dx: &[f64], vm: &mut [f64], va: &mut [f64]) {
    for k in 0..vm.len() {
        if let Some(c) = unknowns.theta[k] {
            va[k] += dx[c];
        }
        if let Some(c) = unknowns.vmag[k] {
            vm[k] += dx[c];
        }
    }
}

/// Sequential reference solver: sparse Jacobian assembly, dense LU solve.
pub fn solve_newton_raphson(
    case: &GridCase,
    topo: &Topology,
    inj: &Injections,
    opts: &SolverOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    opts.validate()?;
    inj.validate(case)?;
    validate_topology(case, topo).into_result()?;
    let y = build_ybus(case, topo)?;
    let spec = NodeSpec::build(case, topo, &y.nodes, inj)?;
    let layout = JacobianLayout::new(y.matrix.pattern().clone(), &spec.kinds);
    let mut vm = spec.initial_magnitudes();
    let mut va = initial_angles(case, topo, inj, &y.nodes, &spec, &opts.initializer)?;

    let dim = layout.dim();
    let mut f = vec![0.0; dim];
    let mut jac = vec![0.0; layout.pattern.nnz()];
    let mut norm = f64::INFINITY;
    for iteration in 1..=opts.max_iterations {
        let v = phasors(&vm, &va);
        let ibus = y.matrix.mul_vec(&v);
        stacked_mismatch(&layout.unknowns, &v, &ibus, &spec.p, &spec.q, &mut f);
        norm = max_abs(&f);
        if !norm.is_finite() {
            break;
        }
        if norm < opts.tolerance {
            let state = NodeState {
                nodes: y.nodes.clone(),
                kinds: spec.kinds.clone(),
                vm,
                va,
            };
            return Ok(finish(case, topo, &y, &spec, inj, state, opts, iteration, norm));
        }
        if iteration == opts.max_iterations {
            break;
        }
        layout.fill(&y.matrix, &v, &ibus, &mut jac);
        let dx = dense_solve(&layout, &jac, &f).ok_or(PowerFlowError::SingularJacobian { iteration })?;
        apply_step(&layout.unknowns, &dx, &mut vm, &mut va);
    }
    Err(PowerFlowError::NonConvergence {
        iterations: opts.max_iterations,
        mismatch: norm,
    })
}

/// Solves `J dx = −f` densely.
pub(crate) fn dense_solve(layout: &JacobianLayout, jac: &[f64], f: &[f64]) -> Option<Vec<f64>> {
    let dim = layout.dim();
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    let pat = &layout.pattern;
    for r in 0..dim {
        for p in pat.row_range(r) {
            a[(r, pat.col_idx()[p])] = jac[p];
        }
    }
    let rhs = DVector::from_iterator(dim, f.iter().map(|x| -x));
    let dx = a.lu().solve(&rhs)?;
    dx.iter().all(|x| x.is_finite()).then(|| dx.as_slice().to_vec())
}

/// Line quantities and generator dispatch of a converged state.
#[allow(clippy::too_many_arguments)]
pub(crate) fn finish(
    case: &GridCase,
    topo: &Topology,
    y: &AdmittanceMatrix,
    spec: &NodeSpec,
    inj: &Injections,
    state: NodeState,
    opts: &SolverOptions,
    iterations: usize,
    mismatch_norm: f64,
) -> PowerFlowSolution {
    let lines = compute_line_flows_with_factor(case, topo, &state, opts.current_phase_factor);
    let generators = generator_outputs(case, y, spec, inj, &state);
    PowerFlowSolution {
        state,
        lines,
        generators,
        iterations,
        mismatch_norm,
    }
}

/// The slack generator takes whatever active power its node needs; reactive
/// power at a generator node is shared equally by its generators.
pub fn generator_outputs(
    case: &GridCase,
    y: &AdmittanceMatrix,
    spec: &NodeSpec,
    inj: &Injections,
    state: &NodeState,
) -> GeneratorOutputs {
    let v = state.phasors();
    let ibus = y.matrix.mul_vec(&v);
    generator_outputs_from_currents(case, spec, inj, &v, &ibus)
}

/// Same as [`generator_outputs`] from precomputed `V` and `I = Y V`.
pub fn generator_outputs_from_currents(
    case: &GridCase,
    spec: &NodeSpec,
    inj: &Injections,
    v: &[Complex64],
    ibus: &[Complex64],
) -> GeneratorOutputs {
    let base = case.base_mva();
    let n = v.len();
    let mut q_node = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (k, (vk, ik)) in v.iter().zip(ibus).enumerate() {
        q_node[k] = (vk * ik.conj()).im * base;
    }
    for (i, node) in spec.load_node.iter().enumerate() {
        if let Some(k) = *node {
            q_node[k] += inj.load_q[i];
        }
    }
    for node in spec.gen_node.iter().flatten() {
        count[*node] += 1;
    }
    let slack_gen = case.slack_generator();
    let mut p_mw = inj.prod_p.clone();
    let mut q_mvar = vec![0.0; inj.prod_p.len()];
    for (i, node) in spec.gen_node.iter().enumerate() {
        match *node {
            Some(k) => q_mvar[i] = q_node[k] / count[k] as f64,
            None => p_mw[i] = 0.0,
        }
    }
    let k = spec.slack;
    let mut p_slack = (v[k] * ibus[k].conj()).re * base;
    for (i, node) in spec.load_node.iter().enumerate() {
        if *node == Some(k) {
            p_slack += inj.load_p[i];
        }
    }
    for (i, node) in spec.gen_node.iter().enumerate() {
        if *node == Some(k) && i != slack_gen {
            p_slack -= inj.prod_p[i];
        }
    }
    p_mw[slack_gen] = p_slack;
    GeneratorOutputs { p_mw, q_mvar }
}
