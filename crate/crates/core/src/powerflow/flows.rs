use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{NodeState, SQRT_3};
use crate::grid::{admittance_quantum, BranchAdmittance, GridCase, Topology};

/// Per-line quantities at both ends, in line-index order.
///
/// Currents in A, powers in MW/MVAr, voltages in kV, angles in rad.
/// Disconnected lines are all zeros.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LineFlows {
    pub a_or: Vec<f64>,
    pub a_ex: Vec<f64>,
    pub p_or: Vec<f64>,
    pub p_ex: Vec<f64>,
    pub q_or: Vec<f64>,
    pub q_ex: Vec<f64>,
    pub v_or: Vec<f64>,
    pub v_ex: Vec<f64>,
    pub theta_or: Vec<f64>,
    pub theta_ex: Vec<f64>,
}

impl LineFlows {
    pub fn zeros(n: usize) -> Self {
        let z = vec![0.0; n];
        Self {
            a_or: z.clone(),
            a_ex: z.clone(),
            p_or: z.clone(),
            p_ex: z.clone(),
            q_or: z.clone(),
            q_ex: z.clone(),
            v_or: z.clone(),
            v_ex: z.clone(),
            theta_or: z.clone(),
            theta_ex: z,
        }
    }

    pub fn len(&self) -> usize {
        self.p_or.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_or.is_empty()
    }

    /// `Σ (p_or + p_ex)`, the active losses in MW.
    pub fn total_losses(&self) -> f64 {
        self.p_or.iter().zip(&self.p_ex).map(|(a, b)| a + b).sum()
    }
}

pub fn compute_line_flows(case: &GridCase, topo: &Topology, state: &NodeState) -> LineFlows {
    compute_line_flows_with_factor(case, topo, state, SQRT_3)
}

pub fn compute_line_flows_with_factor(
    case: &GridCase,
    topo: &Topology,
    state: &NodeState,
    phase_factor: f64,
) -> LineFlows {
    let mut out = LineFlows::zeros(case.n_lines());
    let base = case.base_mva();
    let quantum = admittance_quantum(case);
    for (l, line) in case.lines().iter().enumerate() {
        let Some((k, m)) = state.nodes.line_nodes(case, topo, l) else {
            continue;
        };
        let Some(y) = BranchAdmittance::of(line).map(|y| y.quantized(quantum)) else {
            continue;
        };
        let vk = Complex64::from_polar(state.vm[k], state.va[k]);
        let vm = Complex64::from_polar(state.vm[m], state.va[m]);
        let s_or = vk * (y.ff * vk + y.fe * vm).conj() * base;
        let s_ex = vm * (y.ef * vk + y.ee * vm).conj() * base;
        let kv_or = state.vm[k] * case.substations()[line.from].base_kv;
        let kv_ex = state.vm[m] * case.substations()[line.to].base_kv;
        out.p_or[l] = s_or.re;
        out.q_or[l] = s_or.im;
        out.p_ex[l] = s_ex.re;
        out.q_ex[l] = s_ex.im;
        out.v_or[l] = kv_or;
        out.v_ex[l] = kv_ex;
        out.theta_or[l] = state.va[k];
        out.theta_ex[l] = state.va[m];
        out.a_or[l] = current_amps(s_or.norm(), kv_or, phase_factor);
        out.a_ex[l] = current_amps(s_ex.norm(), kv_ex, phase_factor);
    }
    out
}

/// MVA over kV gives kA.
fn current_amps(s_mva: f64, v_kv: f64, phase_factor: f64) -> f64 {
    if v_kv > 0.0 {
        1000.0 * s_mva / (phase_factor * v_kv)
    } else {
        0.0
    }
}
