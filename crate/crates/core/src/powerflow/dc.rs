//! Linearized `B θ = P` power flow.

use nalgebra::{DMatrix, DVector};

use super::{Injections, NodeSpec, PowerFlowError};
use crate::grid::{validate_topology, GridCase, NodeMap, Topology};

#[derive(Debug, Clone, PartialEq)]
pub struct DcSolution {
    pub nodes: NodeMap,
    /// Radians, slack node at 0.
    pub angles: Vec<f64>,
}

pub fn dc_power_flow(case: &GridCase, topo: &Topology, inj: &Injections) -> Result<DcSolution, PowerFlowError> {
    inj.validate(case)?;
    validate_topology(case, topo).into_result()?;
    let nodes = NodeMap::from_topology(case, topo);
    let spec = NodeSpec::build(case, topo, &nodes, inj)?;
    let angles = dc_angles(case, topo, &nodes, &spec)?;
    Ok(DcSolution { nodes, angles })
}

/// DC angles over a node map. Branch susceptance is `1 / (x·τ)`; losses,
/// charging and shunts are ignored.
pub fn dc_angles(
    case: &GridCase,
    topo: &Topology,
    nodes: &NodeMap,
    spec: &NodeSpec,
) -> Result<Vec<f64>, PowerFlowError> {
    let n = nodes.len();
    let slack = spec.slack;
    // reduced index: skip the slack row/column
    let red = |k: usize| if k < slack { Some(k) } else if k > slack { Some(k - 1) } else { None };
    let mut b = DMatrix::<f64>::zeros(n - 1, n - 1);
    for (l, line) in case.lines().iter().enumerate() {
        let Some((k, m)) = nodes.line_nodes(case, topo, l) else {
            continue;
        };
        if k == m || line.x == 0.0 {
            continue;
        }
        let s = 1.0 / (line.x * line.tap);
        if let Some(i) = red(k) {
            b[(i, i)] += s;
        }
        if let Some(j) = red(m) {
            b[(j, j)] += s;
        }
        if let (Some(i), Some(j)) = (red(k), red(m)) {
            b[(i, j)] -= s;
            b[(j, i)] -= s;
        }
    }
    let rhs = DVector::from_iterator(n - 1, (0..n).filter(|&k| k != slack).map(|k| spec.p[k]));
    let theta = match b.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => b.lu().solve(&rhs).ok_or(PowerFlowError::SingularDc)?,
    };
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(PowerFlowError::SingularDc);
    }
    let mut angles = vec![0.0; n];
    for k in 0..n {
        if let Some(i) = red(k) {
            angles[k] = theta[i];
        }
    }
    Ok(angles)
}
