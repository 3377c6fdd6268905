use num_complex::Complex64;
use thiserror::Error;

use super::{GridCase, Line, NodeMap, Topology};
use crate::sparse::{CsrMatrix, TripletBuilder};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum YbusError {
    #[error("line {line} ({name}) is in service with zero impedance")]
    ZeroImpedance { line: usize, name: String },
    #[error("line {line} endpoint is not an electrical node of the given node map")]
    MissingNode { line: usize },
}

/// Two-port admittances of one pi-model branch with the tap on the origin
/// side: `[I_or, I_ex] = [[ff, fe], [ef, ee]] · [V_or, V_ex]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchAdmittance {
    pub ff: Complex64,
    pub fe: Complex64,
    pub ef: Complex64,
    pub ee: Complex64,
}

impl BranchAdmittance {
    pub fn of(line: &Line) -> Option<Self> {
        if line.r == 0.0 && line.x == 0.0 {
            return None;
        }
        let y = Complex64::new(1.0, 0.0) / Complex64::new(line.r, line.x);
        let charging = Complex64::new(0.0, line.b / 2.0);
        let ee = y + charging;
        Some(Self {
            ff: ee / (line.tap * line.tap),
            fe: -y / line.tap,
            ef: -y / line.tap,
            ee,
        })
    }

    /// The four terms rounded to multiples of `quantum`.
    pub fn quantized(&self, quantum: f64) -> Self {
        Self {
            ff: quantize(self.ff, quantum),
            fe: quantize(self.fe, quantum),
            ef: quantize(self.ef, quantum),
            ee: quantize(self.ee, quantum),
        }
    }

    /// Series admittance `1 / (r + jx)`.
    pub fn series(line: &Line) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(line.r, line.x)
    }
}

/// Rounds both parts of `c` to the nearest multiple of the power of two `q`.
pub fn quantize(c: Complex64, q: f64) -> Complex64 {
    Complex64::new((c.re / q).round() * q, (c.im / q).round() * q)
}

/// Power-of-two grid on which every admittance term of the case is placed
/// before accumulation.
///
/// The grid is chosen from the largest possible per-substation sum of term
/// magnitudes, so every partial sum of grid multiples stays below `2^51`
/// grid steps and is exact. Nodal sums then do not depend on summation
/// order, and adding or removing a line changes an entry by exactly its own
/// terms.
pub fn admittance_quantum(case: &GridCase) -> f64 {
    let base = case.base_mva();
    let mut bound: Vec<f64> = case
        .substations()
        .iter()
        .map(|s| (s.shunt_g_mw.abs() + s.shunt_b_mvar.abs()) / base)
        .collect();
    for line in case.lines() {
        if let Some(y) = BranchAdmittance::of(line) {
            let mag = |c: Complex64| c.re.abs() + c.im.abs();
            let t = mag(y.ff) + mag(y.fe) + mag(y.ef) + mag(y.ee);
            bound[line.from] += t;
            bound[line.to] += t;
        }
    }
    let s = bound.iter().fold(f64::MIN_POSITIVE, |m, &b| m.max(b));
    2f64.powi(s.log2().ceil() as i32 - 51)
}

/// Nodal admittance matrix in per-unit on the system base.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub nodes: NodeMap,
    pub matrix: CsrMatrix<Complex64>,
}

impl AdmittanceMatrix {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn get(&self, k: usize, m: usize) -> Complex64 {
        self.matrix.get(k, m)
    }
}

/// Builds `Y` for a topology. Diagonals collect substation shunts (on
/// busbar 1) and every branch term; off-diagonals carry `-y/τ`. Terms are
/// placed on the [`admittance_quantum`] grid first, which makes every entry
/// an exact sum.
pub fn build_ybus(case: &GridCase, topo: &Topology) -> Result<AdmittanceMatrix, YbusError> {
    let nodes = NodeMap::from_topology(case, topo);
    let lines: Vec<(usize, usize, usize)> = (0..case.n_lines())
        .filter_map(|l| nodes.line_nodes(case, topo, l).map(|(k, m)| (l, k, m)))
        .collect();
    build_ybus_with_lines(case, nodes, &lines)
}

/// Builds `Y` over a given node map from explicit `(line, origin node,
/// extremity node)` triples.
pub fn build_ybus_with_lines(
    case: &GridCase,
    nodes: NodeMap,
    lines: &[(usize, usize, usize)],
) -> Result<AdmittanceMatrix, YbusError> {
    let n = nodes.len();
    let mut builder = TripletBuilder::with_capacity(n, n, n + 4 * lines.len());
    let base = case.base_mva();
    let q = admittance_quantum(case);
    for (sub, s) in case.substations().iter().enumerate() {
        if s.shunt_g_mw == 0.0 && s.shunt_b_mvar == 0.0 {
            continue;
        }
        if let Some(k) = nodes.node(sub, 1) {
            builder.push(k, k, quantize(Complex64::new(s.shunt_g_mw / base, s.shunt_b_mvar / base), q));
        }
    }
    for &(l, k, m) in lines {
        if k >= n || m >= n {
            return Err(YbusError::MissingNode { line: l });
        }
        let line = &case.lines()[l];
        let y = BranchAdmittance::of(line)
            .ok_or_else(|| YbusError::ZeroImpedance {
                line: l,
                name: line.name.clone(),
            })?
            .quantized(q);
        builder.push(k, k, y.ff);
        builder.push(k, m, y.fe);
        builder.push(m, k, y.ef);
        builder.push(m, m, y.ee);
    }
    Ok(AdmittanceMatrix {
        nodes,
        matrix: builder.build(),
    })
}
