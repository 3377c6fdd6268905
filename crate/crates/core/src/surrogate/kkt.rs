//! Euclidean projection of predicted active flows onto the nodal
//! conservation hyperplane, and the disconnected-line mask.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use super::SurrogateError;
use crate::grid::{GridCase, NodeMap, Topology};
use crate::metrics::{PredictionSet, Quantity};
use crate::powerflow::Injections;

/// Net injections below this (MW) make an isolated node trivially feasible.
const EMPTY_ROW_INJECTION: f64 = 1e-9;

/// Sparse full-row-rank `A` with a cached Cholesky factor of `A Aᵀ`.
#[derive(Debug, Clone)]
pub struct ConstraintMatrix {
    n_vars: usize,
    rows: Vec<Vec<(usize, f64)>>,
    gram: Cholesky<f64, Dyn>,
}

impl ConstraintMatrix {
    pub fn new(n_vars: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self, SurrogateError> {
        if let Some((r, &(c, _))) = rows.iter().enumerate().find_map(|(r, row)| row.iter().find(|e| e.0 >= n_vars).map(|e| (r, e))) {
            return Err(SurrogateError::Dimension(format!("row {r} references variable {c} of {n_vars}")));
        }
        let m = rows.len();
        let dense: Vec<Vec<f64>> = rows
            .iter()
            .map(|row| {
                let mut d = vec![0.0; n_vars];
                for &(c, v) in row {
                    d[c] += v;
                }
                d
            })
            .collect();
        let gram = DMatrix::from_fn(m, m, |i, j| dense[i].iter().zip(&dense[j]).map(|(a, b)| a * b).sum::<f64>());
        let scale = (0..m).map(|i| gram[(i, i)]).fold(0.0, f64::max);
        let chol = gram.cholesky().ok_or(SurrogateError::RankDeficient { row: 0, pivot: 0.0 })?;
        let l = chol.l_dirty();
        if let Some(i) = (0..m).find(|&i| l[(i, i)] * l[(i, i)] <= 1e-12 * scale) {
            return Err(SurrogateError::RankDeficient {
                row: i,
                pivot: l[(i, i)] * l[(i, i)],
            });
        }
        Ok(Self {
            n_vars,
            rows,
            gram: chol,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|row| row.iter().map(|&(c, v)| v * y[c]).sum()).collect()
    }

    /// `y − Aᵀ (A Aᵀ)⁻¹ (A y − b)`.
    pub fn project(&self, y: &[f64], b: &[f64]) -> Vec<f64> {
        let r = DVector::from_iterator(self.n_rows(), self.apply(y).iter().zip(b).map(|(ay, b)| ay - b));
        let lambda = self.gram.solve(&r);
        let mut out = y.to_vec();
        for (row, l) in self.rows.iter().zip(lambda.iter()) {
            for &(c, v) in row {
                out[c] -= v * l;
            }
        }
        out
    }
}

/// `A y = b` for one sample.
#[derive(Debug, Clone)]
pub struct LinearConstraintSystem {
    pub matrix: Arc<ConstraintMatrix>,
    pub b: Vec<f64>,
    /// Electrical node of each row (conservation systems only).
    pub row_nodes: Vec<usize>,
}

impl LinearConstraintSystem {
    pub fn new(matrix: Arc<ConstraintMatrix>, b: Vec<f64>) -> Result<Self, SurrogateError> {
        if b.len() != matrix.n_rows() {
            return Err(SurrogateError::Dimension(format!("{} rows but {} right-hand sides", matrix.n_rows(), b.len())));
        }
        Ok(Self {
            matrix,
            b,
            row_nodes: Vec::new(),
        })
    }

    pub fn residual(&self, y: &[f64]) -> Vec<f64> {
        self.matrix.apply(y).iter().zip(&self.b).map(|(a, b)| a - b).collect()
    }

    pub fn residual_inf(&self, y: &[f64]) -> f64 {
        self.residual(y).iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

pub fn kkt_project(y: &[f64], sys: &LinearConstraintSystem) -> Result<Vec<f64>, SurrogateError> {
    if y.len() != sys.matrix.n_vars() {
        return Err(SurrogateError::Dimension(format!(
            "prediction has {} values, system has {} variables",
            y.len(),
            sys.matrix.n_vars()
        )));
    }
    Ok(sys.matrix.project(y, &sys.b))
}

/// Rows over the `[p_or; p_ex]` layout, one per energized node with at
/// least one connected line. Each flow variable sits in exactly one row.
fn conservation_rows(case: &GridCase, topo: &Topology) -> (NodeMap, Vec<Vec<(usize, f64)>>, Vec<usize>) {
    let n = case.n_lines();
    let nodes = NodeMap::from_topology(case, topo);
    let mut per_node: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nodes.len()];
    for l in 0..n {
        if let Some((k, m)) = nodes.line_nodes(case, topo, l) {
            per_node[k].push((l, 1.0));
            per_node[m].push((n + l, 1.0));
        }
    }
    let row_nodes: Vec<usize> = (0..nodes.len()).filter(|&k| !per_node[k].is_empty()).collect();
    let rows = row_nodes.iter().map(|&k| std::mem::take(&mut per_node[k])).collect();
    (nodes, rows, row_nodes)
}

/// Net injection `production − load − shunt conductance at 1 pu` per node (MW).
fn net_injection(case: &GridCase, topo: &Topology, nodes: &NodeMap, inj: &Injections) -> Vec<f64> {
    let mut out = vec![0.0; nodes.len()];
    for (g, gen) in case.generators().iter().enumerate() {
        if let Some(k) = nodes.node_of(topo, gen.substation, case.gen_pos(g)) {
            out[k] += inj.prod_p[g];
        }
    }
    for (i, load) in case.loads().iter().enumerate() {
        if let Some(k) = nodes.node_of(topo, load.substation, case.load_pos(i)) {
            out[k] -= inj.load_p[i];
        }
    }
    for (sub, st) in case.substations().iter().enumerate() {
        if let Some(k) = nodes.node(sub, 1) {
            out[k] -= st.shunt_g_mw;
        }
    }
    out
}

fn rhs(
    case: &GridCase,
    topo: &Topology,
    nodes: &NodeMap,
    row_nodes: &[usize],
    inj: &Injections,
) -> Result<Vec<f64>, SurrogateError> {
    inj.validate(case).map_err(|e| SurrogateError::Dimension(e.to_string()))?;
    let net = net_injection(case, topo, nodes, inj);
    let mut kept = row_nodes.iter().peekable();
    for (k, &p) in net.iter().enumerate() {
        if kept.peek() == Some(&&k) {
            kept.next();
        } else if p.abs() > EMPTY_ROW_INJECTION {
            return Err(SurrogateError::Infeasible { node: k, injection: p });
        }
    }
    Ok(row_nodes.iter().map(|&k| net[k]).collect())
}

/// Conservation system of one sample. `inj.prod_p` must be the realized
/// production, slack included.
pub fn build_conservation_constraints(
    case: &GridCase,
    topo: &Topology,
    inj: &Injections,
) -> Result<LinearConstraintSystem, SurrogateError> {
    topo.check_dimensions(case).map_err(|e| SurrogateError::Dimension(e.to_string()))?;
    let (nodes, rows, row_nodes) = conservation_rows(case, topo);
    let matrix = Arc::new(ConstraintMatrix::new(2 * case.n_lines(), rows)?);
    let b = rhs(case, topo, &nodes, &row_nodes, inj)?;
    Ok(LinearConstraintSystem { matrix, b, row_nodes })
}

struct CachedTopology {
    nodes: NodeMap,
    matrix: Arc<ConstraintMatrix>,
    row_nodes: Vec<usize>,
}

/// Factorizations keyed by topology, shared across samples and threads.
#[derive(Default)]
pub struct ProjectionCache {
    map: RwLock<HashMap<Topology, Arc<CachedTopology>>>,
}

impl ProjectionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn system(&self, case: &GridCase, topo: &Topology, inj: &Injections) -> Result<LinearConstraintSystem, SurrogateError> {
        let hit = self.map.read().expect("cache lock").get(topo).cloned();
        let entry = match hit {
            Some(e) => e,
            None => {
                topo.check_dimensions(case).map_err(|e| SurrogateError::Dimension(e.to_string()))?;
                let (nodes, rows, row_nodes) = conservation_rows(case, topo);
                let built = Arc::new(CachedTopology {
                    nodes,
                    matrix: Arc::new(ConstraintMatrix::new(2 * case.n_lines(), rows)?),
                    row_nodes,
                });
                // a racing thread may have inserted an identical entry
                self.map.write().expect("cache lock").entry(topo.clone()).or_insert(built).clone()
            }
        };
        let b = rhs(case, topo, &entry.nodes, &entry.row_nodes, inj)?;
        Ok(LinearConstraintSystem {
            matrix: entry.matrix.clone(),
            b,
            row_nodes: entry.row_nodes.clone(),
        })
    }
}

/// Zeroes every current and power of disconnected lines.
pub fn apply_hard_zero_mask(pred: &PredictionSet, topos: &[Topology]) -> Result<PredictionSet, SurrogateError> {
    if topos.len() != pred.n_samples() {
        return Err(SurrogateError::Dimension(format!(
            "{} samples but {} topologies",
            pred.n_samples(),
            topos.len()
        )));
    }
    let mut out = pred.clone();
    let flows: Vec<Quantity> = out.quantities().filter(|q| q.is_flow()).collect();
    for (s, topo) in topos.iter().enumerate() {
        if topo.line_status.len() != pred.n_lines() {
            return Err(SurrogateError::Dimension(format!("topology {s} has {} lines", topo.line_status.len())));
        }
        for &q in &flows {
            let row = out.row_mut(q, s).expect("listed quantity");
            for (v, &on) in row.iter_mut().zip(&topo.line_status) {
                if !on {
                    *v = 0.0;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionReport {
    /// Largest `‖A ỹ − b‖∞` over samples after the final mask (MW).
    pub max_residual: f64,
    pub topologies: usize,
}

/// Mask, project `(p_or, p_ex)` per sample, re-mask.
pub fn project_predictions(
    pred: &PredictionSet,
    case: &GridCase,
    topos: &[Topology],
    injections: &[Injections],
    cache: &ProjectionCache,
) -> Result<(PredictionSet, ProjectionReport), SurrogateError> {
    if injections.len() != pred.n_samples() || pred.n_lines() != case.n_lines() {
        return Err(SurrogateError::Dimension(format!(
            "{} samples of {} lines, {} injection sets, case has {} lines",
            pred.n_samples(),
            pred.n_lines(),
            injections.len(),
            case.n_lines()
        )));
    }
    let mut out = apply_hard_zero_mask(pred, topos)?;
    let n = case.n_lines();
    let (p_or, p_ex) = (out.require(Quantity::POr)?, out.require(Quantity::PEx)?);
    let projected = (0..pred.n_samples())
        .into_par_iter()
        .map(|s| {
            let sys = cache.system(case, &topos[s], &injections[s])?;
            let mut y = p_or[s * n..(s + 1) * n].to_vec();
            y.extend_from_slice(&p_ex[s * n..(s + 1) * n]);
            let mut z = kkt_project(&y, &sys)?;
            for (l, &on) in topos[s].line_status.iter().enumerate() {
                if !on {
                    z[l] = 0.0;
                    z[n + l] = 0.0;
                }
            }
            Ok((sys.residual_inf(&z), z))
        })
        .collect::<Result<Vec<_>, SurrogateError>>()?;
    let mut max_residual = 0.0f64;
    for (s, (res, z)) in projected.into_iter().enumerate() {
        max_residual = max_residual.max(res);
        out.row_mut(Quantity::POr, s).expect("checked").copy_from_slice(&z[..n]);
        out.row_mut(Quantity::PEx, s).expect("checked").copy_from_slice(&z[n..]);
    }
    Ok((
        out,
        ProjectionReport {
            max_residual,
            topologies: cache.len(),
        },
    ))
}
