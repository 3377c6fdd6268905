//! Batched many-scenario power flow.
//!
//! Scenarios sharing a busbar assignment (and hence an electrical node set)
//! are clustered. Each cluster keeps one base admittance matrix built from
//! the union of in-service lines of its members, and every member is a
//! sparse delta against it. Newton iterations run in lockstep over a
//! cluster; the per-member linear systems form a block-diagonal system
//! solved by preconditioned conjugate gradients on the normal equations.

mod batch;
mod pcg;

use std::collections::HashMap;

use num_complex::Complex64;
use thiserror::Error;

use crate::grid::{
    admittance_quantum, build_ybus_with_lines, AdmittanceMatrix, BranchAdmittance, GridCase, NodeMap, Topology,
    YbusError,
};

pub use batch::{
    assemble_block_system, batch_solve, batch_solve_with, BatchOptions, BatchReport, BatchTiming,
    ClusterSystem, MemberState, PreconditionerKind,
};
pub use pcg::{
    pcg_solve, pcg_solve_blocks, Block, BlockReport, BlockSystem, PcgError, PcgOutcome,
    Preconditioner,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ContingencyError {
    #[error("topology does not share the cluster busbar signature")]
    SignatureMismatch,
    #[error("line {line} is in service but absent from the cluster base")]
    LineNotInBase { line: usize },
    #[error(transparent)]
    Ybus(#[from] YbusError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Exact busbar assignment plus the energized node set it induces.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClusterSignature {
    pub busbar: Vec<i8>,
    pub nodes: Vec<(usize, u8)>,
}

impl ClusterSignature {
    pub fn of(case: &GridCase, topo: &Topology) -> Self {
        Self {
            busbar: topo.busbar.clone(),
            nodes: NodeMap::from_topology(case, topo).nodes().to_vec(),
        }
    }
}

/// Scenarios sharing one signature. Members differ only in line statuses.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioCluster {
    pub signature: ClusterSignature,
    /// Indices into the clustered list, ascending.
    pub members: Vec<usize>,
    /// Shared busbars with every line that is in service in some member.
    pub base_topology: Topology,
    pub nodes: NodeMap,
}

/// Partitions topologies by signature. Clusters appear in order of first
/// occurrence.
pub fn cluster_scenarios(case: &GridCase, topos: &[Topology]) -> Vec<ScenarioCluster> {
    let mut index: HashMap<ClusterSignature, usize> = HashMap::new();
    let mut clusters: Vec<ScenarioCluster> = Vec::new();
    for (i, topo) in topos.iter().enumerate() {
        let sig = ClusterSignature::of(case, topo);
        match index.get(&sig) {
            Some(&c) => {
                let cl = &mut clusters[c];
                cl.members.push(i);
                for (s, &on) in cl.base_topology.line_status.iter_mut().zip(&topo.line_status) {
                    *s |= on;
                }
            }
            None => {
                index.insert(sig.clone(), clusters.len());
                clusters.push(ScenarioCluster {
                    nodes: NodeMap::from_topology(case, topo),
                    signature: sig,
                    members: vec![i],
                    base_topology: topo.clone(),
                });
            }
        }
    }
    clusters
}

/// Sparse difference `Y_scenario − Y_base`. `pos` indexes the base pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaAdmittance {
    pub scenario: usize,
    pub entries: Vec<DeltaEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaEntry {
    pub pos: usize,
    pub row: usize,
    pub col: usize,
    pub value: Complex64,
}

impl DeltaAdmittance {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(pos, row, col, value)` tuples for Jacobian updates.
    pub fn as_tuples(&self) -> Vec<(usize, usize, usize, Complex64)> {
        self.entries.iter().map(|e| (e.pos, e.row, e.col, e.value)).collect()
    }

    /// `ΔY V` on the touched rows, in row order.
    pub fn currents(&self, v: &[Complex64]) -> Vec<(usize, Complex64)> {
        let mut out: Vec<(usize, Complex64)> = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let c = e.value * v[e.col];
            match out.iter_mut().find(|(r, _)| *r == e.row) {
                Some((_, acc)) => *acc += c,
                None => out.push((e.row, c)),
            }
        }
        out
    }
}

/// Base admittance of a cluster and the terms of each of its lines.
#[derive(Debug, Clone)]
pub struct ClusterBase {
    pub y: AdmittanceMatrix,
    /// `(line, origin node, extremity node)` for every base line, by index.
    pub lines: Vec<(usize, usize, usize)>,
    /// Grid-rounded two-port terms, as accumulated into `y`.
    admittances: Vec<BranchAdmittance>,
}

impl ClusterBase {
    pub fn new(case: &GridCase, cluster: &ScenarioCluster) -> Result<Self, ContingencyError> {
        let topo = &cluster.base_topology;
        let lines: Vec<(usize, usize, usize)> = (0..case.n_lines())
            .filter_map(|l| cluster.nodes.line_nodes(case, topo, l).map(|(k, m)| (l, k, m)))
            .collect();
        let y = build_ybus_with_lines(case, cluster.nodes.clone(), &lines)?;
        let q = admittance_quantum(case);
        let admittances = lines
            .iter()
            .map(|&(l, _, _)| {
                BranchAdmittance::of(&case.lines()[l])
                    .expect("validated by ybus build")
                    .quantized(q)
            })
            .collect();
        Ok(Self { y, lines, admittances })
    }

    /// Removing a base line subtracts exactly its own four terms; entries
    /// are grid multiples, so the result equals a full rebuild bit for bit.
    pub fn delta(&self, case: &GridCase, scenario: usize, topo: &Topology) -> Result<DeltaAdmittance, ContingencyError> {
        if let Some(line) = (0..case.n_lines())
            .find(|&l| topo.line_ends(case, l).is_some() && self.lines.binary_search_by_key(&l, |x| x.0).is_err())
        {
            return Err(ContingencyError::LineNotInBase { line });
        }
        let pattern = self.y.matrix.pattern();
        let mut acc: Vec<((usize, usize), Complex64)> = Vec::new();
        for (j, &(l, k, m)) in self.lines.iter().enumerate() {
            if topo.line_ends(case, l).is_some() {
                continue;
            }
            let y = &self.admittances[j];
            acc.extend([((k, k), -y.ff), ((k, m), -y.fe), ((m, k), -y.ef), ((m, m), -y.ee)]);
        }
        acc.sort_by_key(|e| e.0);
        let mut entries: Vec<DeltaEntry> = Vec::with_capacity(acc.len());
        for ((row, col), value) in acc {
            match entries.last_mut() {
                Some(e) if (e.row, e.col) == (row, col) => e.value += value,
                _ => entries.push(DeltaEntry {
                    pos: pattern.find(row, col).expect("base pattern holds every base line"),
                    row,
                    col,
                    value,
                }),
            }
        }
        Ok(DeltaAdmittance { scenario, entries })
    }
}

/// Delta of one scenario against a cluster's base.
pub fn build_delta_admittance(
    case: &GridCase,
    base: &ClusterBase,
    cluster: &ScenarioCluster,
    scenario: usize,
    topo: &Topology,
) -> Result<DeltaAdmittance, ContingencyError> {
    if ClusterSignature::of(case, topo) != cluster.signature {
        return Err(ContingencyError::SignatureMismatch);
    }
    base.delta(case, scenario, topo)
}

#[cfg(test)]
mod tests;
