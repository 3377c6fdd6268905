//! Power mismatch and polar-form Jacobian on a reusable sparsity layout.
//!
//! Unknowns are ordered `[θ at PV and PQ nodes, |V| at PQ nodes]`, equations
//! `[ΔP at PV and PQ nodes, ΔQ at PQ nodes]`, both in node order. The
//! complex power `S = diag(V) conj(Y V)` is linear in `Y`, so the Jacobian of
//! `Y_base + ΔY` is the base Jacobian plus the Jacobian contribution of the
//! delta entries alone.

use std::sync::Arc;

use num_complex::Complex64;

use super::NodeKind;
use crate::sparse::{CsrMatrix, CsrPattern};

/// Column/row numbering of the Newton unknowns for a fixed node
/// classification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownIndex {
    /// Angle unknown (and active-power equation) per node.
    pub theta: Vec<Option<usize>>,
    /// Magnitude unknown (and reactive-power equation) per node.
    pub vmag: Vec<Option<usize>>,
    pub dim: usize,
}

impl UnknownIndex {
    pub fn new(kinds: &[NodeKind]) -> Self {
        let mut theta = vec![None; kinds.len()];
        let mut vmag = vec![None; kinds.len()];
        let mut next = 0;
        for (k, kind) in kinds.iter().enumerate() {
            if *kind != NodeKind::Slack {
                theta[k] = Some(next);
                next += 1;
            }
        }
        for (k, kind) in kinds.iter().enumerate() {
            if *kind == NodeKind::Pq {
                vmag[k] = Some(next);
                next += 1;
            }
        }
        Self {
            theta,
            vmag,
            dim: next,
        }
    }
}

/// Jacobian positions touched by one admittance entry `(k, m)`:
/// `[P_k/θ_m, P_k/V_m, Q_k/θ_m, Q_k/V_m]`.
type Slots = [Option<usize>; 4];

/// Symbolic Jacobian structure derived from an admittance pattern.
#[derive(Debug, Clone)]
pub struct JacobianLayout {
    pub unknowns: UnknownIndex,
    pub pattern: Arc<CsrPattern>,
    y_pattern: Arc<CsrPattern>,
    entry_slots: Vec<Slots>,
    diag_slots: Vec<Slots>,
}

impl JacobianLayout {
    pub fn new(y_pattern: Arc<CsrPattern>, kinds: &[NodeKind]) -> Self {
        let unknowns = UnknownIndex::new(kinds);
        let n = kinds.len();
        let pairs = |k: usize, m: usize| -> [Option<(usize, usize)>; 4] {
            let (pk, qk) = (unknowns.theta[k], unknowns.vmag[k]);
            let (tm, vm) = (unknowns.theta[m], unknowns.vmag[m]);
            [
                pk.zip(tm),
                pk.zip(vm),
                qk.zip(tm),
                qk.zip(vm),
            ]
        };
        let mut coords: Vec<(usize, usize)> = Vec::new();
        for k in 0..n {
            coords.extend(pairs(k, k).into_iter().flatten());
            for p in y_pattern.row_range(k) {
                let m = y_pattern.col_idx()[p];
                coords.extend(pairs(k, m).into_iter().flatten());
            }
        }
        coords.sort_unstable();
        coords.dedup();
        let pattern = Arc::new(CsrPattern::from_sorted_entries(
            unknowns.dim,
            unknowns.dim,
            &coords,
        ));
        let locate = |pp: [Option<(usize, usize)>; 4]| -> Slots {
            pp.map(|rc| rc.map(|(r, c)| pattern.find(r, c).expect("coordinate was inserted")))
        };
        let mut entry_slots = Vec::with_capacity(y_pattern.nnz());
        for k in 0..n {
            for p in y_pattern.row_range(k) {
                entry_slots.push(locate(pairs(k, y_pattern.col_idx()[p])));
            }
        }
        let diag_slots = (0..n).map(|k| locate(pairs(k, k))).collect();
        Self {
            unknowns,
            pattern,
            y_pattern,
            entry_slots,
            diag_slots,
        }
    }

    pub fn dim(&self) -> usize {
        self.unknowns.dim
    }

    pub fn y_pattern(&self) -> &Arc<CsrPattern> {
        &self.y_pattern
    }

    /// Slots of the admittance entry stored at position `p` of the Y pattern.
    fn slots_at(&self, p: usize) -> &Slots {
        &self.entry_slots[p]
    }

    /// Writes the Jacobian of `S(V) = diag(V) conj(Y V)` into `out`
    /// (overwriting). `ibus` must be `Y V`.
    pub fn fill(&self, y: &CsrMatrix<Complex64>, v: &[Complex64], ibus: &[Complex64], out: &mut [f64]) {
        debug_assert!(Arc::ptr_eq(y.pattern(), &self.y_pattern) || **y.pattern() == *self.y_pattern);
        out.iter_mut().for_each(|x| *x = 0.0);
        let cols = self.y_pattern.col_idx();
        for k in 0..v.len() {
            for p in self.y_pattern.row_range(k) {
                accumulate(out, self.slots_at(p), v[k], y.values()[p], v[cols[p]]);
            }
            accumulate_diag(out, &self.diag_slots[k], v[k], ibus[k]);
        }
    }

    /// Adds the Jacobian contribution of sparse admittance changes.
    /// `entries` holds `(Y-pattern position, row, col, Δvalue)`; `dibus` must
    /// be `ΔY V` for every row touched.
    pub fn add_delta(
        &self,
        entries: &[(usize, usize, usize, Complex64)],
        v: &[Complex64],
        dibus: &[(usize, Complex64)],
        out: &mut [f64],
    ) {
        for &(p, k, m, dy) in entries {
            accumulate(out, self.slots_at(p), v[k], dy, v[m]);
        }
        for &(k, di) in dibus {
            accumulate_diag(out, &self.diag_slots[k], v[k], di);
        }
    }
}

#[inline]
fn accumulate(out: &mut [f64], slots: &Slots, vk: Complex64, ykm: Complex64, vm: Complex64) {
    let j = Complex64::new(0.0, 1.0);
    let yv = ykm * vm;
    let d_angle = j * vk * (-yv).conj();
    let vm_abs = vm.norm();
    let d_mag = if vm_abs > 0.0 {
        vk * (yv / vm_abs).conj()
    } else {
        Complex64::new(0.0, 0.0)
    };
    if let Some(s) = slots[0] {
        out[s] += d_angle.re;
    }
    if let Some(s) = slots[1] {
        out[s] += d_mag.re;
    }
    if let Some(s) = slots[2] {
        out[s] += d_angle.im;
    }
    if let Some(s) = slots[3] {
        out[s] += d_mag.im;
    }
}

#[inline]
fn accumulate_diag(out: &mut [f64], slots: &Slots, vk: Complex64, ik: Complex64) {
    let j = Complex64::new(0.0, 1.0);
    let d_angle = j * vk * ik.conj();
    let vk_abs = vk.norm();
    let d_mag = if vk_abs > 0.0 {
        ik.conj() * vk / vk_abs
    } else {
        Complex64::new(0.0, 0.0)
    };
    if let Some(s) = slots[0] {
        out[s] += d_angle.re;
    }
    if let Some(s) = slots[1] {
        out[s] += d_mag.re;
    }
    if let Some(s) = slots[2] {
        out[s] += d_angle.im;
    }
    if let Some(s) = slots[3] {
        out[s] += d_mag.im;
    }
}

/// Polar voltages to rectangular phasors.
pub fn phasors(vm: &[f64], va: &[f64]) -> Vec<Complex64> {
    vm.iter()
        .zip(va)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect()
}

/// `ΔP`/`ΔQ` residual `S_calc − S_spec` stacked in equation order.
pub fn stacked_mismatch(
    unknowns: &UnknownIndex,
    v: &[Complex64],
    ibus: &[Complex64],
    p_spec: &[f64],
    q_spec: &[f64],
    out: &mut [f64],
) {
    for k in 0..v.len() {
        let s = v[k] * ibus[k].conj();
        if let Some(r) = unknowns.theta[k] {
            out[r] = s.re - p_spec[k];
        }
        if let Some(r) = unknowns.vmag[k] {
            out[r] = s.im - q_spec[k];
        }
    }
}
