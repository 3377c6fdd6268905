//! Static grid description, case-file ingestion, topology handling and
//! admittance assembly.

pub mod builtin;
mod matpower;
mod native;
mod topology;
mod ybus;

pub use builtin::{ieee118, ieee14, load_case};
pub use matpower::{parse_matpower, MatpowerOptions};
pub use native::{parse_native, to_native_json, NativeCase};
pub use topology::{
    apply_topology_action, validate_topology, InvalidTopology, NodeMap, Topology,
    TopologyAction, TopologyError, TopologyVerdict, MAX_BUSBARS,
};
pub use ybus::{
    admittance_quantum, build_ybus, build_ybus_with_lines, quantize, AdmittanceMatrix,
    BranchAdmittance, YbusError,
};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Substation {
    pub name: String,
    /// Nominal voltage in kV.
    pub base_kv: f64,
    /// Shunt conductance expressed as MW consumed at 1 pu voltage.
    #[serde(default)]
    pub shunt_g_mw: f64,
    /// Shunt susceptance expressed as MVAr injected at 1 pu voltage.
    #[serde(default)]
    pub shunt_b_mvar: f64,
}

/// A branch in the pi model. The optional off-nominal tap sits on the
/// origin side; impedances are per-unit on the system base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub name: String,
    /// Origin substation index.
    pub from: usize,
    /// Extremity substation index.
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance.
    #[serde(default)]
    pub b: f64,
    #[serde(default = "neutral_tap")]
    pub tap: f64,
}

fn neutral_tap() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub name: String,
    pub substation: usize,
    pub p_mw: f64,
    pub v_kv: f64,
    #[serde(default)]
    pub slack: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub name: String,
    pub substation: usize,
    pub p_mw: f64,
    pub q_mvar: f64,
}

/// One connection point in a substation's element roster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementRef {
    Load(usize),
    Generator(usize),
    LineOrigin(usize),
    LineExtremity(usize),
}

#[derive(Debug, Error, PartialEq)]
pub enum CaseError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid case: {0}")]
    Invalid(String),
    #[error("unsupported case content: {0}")]
    Unsupported(String),
    #[error("cannot read case file {path}: {message}")]
    Io { path: String, message: String },
}

/// Validated, immutable grid description.
///
/// Every element endpoint belongs to exactly one substation; the per-substation
/// rosters are derived in the order loads, generators, line origins, line
/// extremities (each sorted by element index). The global topology vector is
/// the concatenation of the rosters in substation order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    base_mva: f64,
    substations: Vec<Substation>,
    lines: Vec<Line>,
    generators: Vec<Generator>,
    loads: Vec<Load>,
    slack: usize,
    rosters: Vec<Vec<ElementRef>>,
    roster_offset: Vec<usize>,
    load_pos: Vec<usize>,
    gen_pos: Vec<usize>,
    line_or_pos: Vec<usize>,
    line_ex_pos: Vec<usize>,
}

impl GridCase {
    pub fn new(
        base_mva: f64,
        substations: Vec<Substation>,
        lines: Vec<Line>,
        generators: Vec<Generator>,
        loads: Vec<Load>,
    ) -> Result<Self, CaseError> {
        let invalid = |m: String| Err(CaseError::Invalid(m));
        if !(base_mva > 0.0 && base_mva.is_finite()) {
            return invalid(format!("base power must be > 0 (got {base_mva})"));
        }
        if substations.is_empty() {
            return invalid("case has no substations".into());
        }
        for (i, s) in substations.iter().enumerate() {
            if !(s.base_kv > 0.0 && s.base_kv.is_finite()) {
                return invalid(format!(
                    "substation {i} ({}) base voltage must be > 0 (got {})",
                    s.name, s.base_kv
                ));
            }
        }
        let nsub = substations.len();
        for (i, l) in lines.iter().enumerate() {
            if l.from >= nsub || l.to >= nsub {
                return invalid(format!(
                    "line {i} ({}) references unknown substation ({} -> {})",
                    l.name, l.from, l.to
                ));
            }
            if l.from == l.to {
                return invalid(format!("line {i} ({}) is a self loop", l.name));
            }
            if !(l.r >= 0.0) {
                return invalid(format!("line {i} ({}) has negative resistance", l.name));
            }
            if !(l.tap > 0.0) || !l.x.is_finite() || !l.b.is_finite() {
                return invalid(format!("line {i} ({}) has invalid parameters", l.name));
            }
        }
        for (i, g) in generators.iter().enumerate() {
            if g.substation >= nsub {
                return invalid(format!("generator {i} ({}) references unknown substation", g.name));
            }
            if !(g.v_kv > 0.0) {
                return invalid(format!("generator {i} ({}) voltage setpoint must be > 0", g.name));
            }
        }
        for (i, l) in loads.iter().enumerate() {
            if l.substation >= nsub {
                return invalid(format!("load {i} ({}) references unknown substation", l.name));
            }
        }
        let slacks: Vec<usize> = generators
            .iter()
            .enumerate()
            .filter(|(_, g)| g.slack)
            .map(|(i, _)| i)
            .collect();
        let slack = match slacks.as_slice() {
            [one] => *one,
            [] => return invalid("exactly one slack generator required, found none".into()),
            many => {
                return invalid(format!(
                    "exactly one slack generator required, found {} (generators {:?})",
                    many.len(),
                    many
                ))
            }
        };

        let mut rosters: Vec<Vec<ElementRef>> = vec![Vec::new(); nsub];
        for (i, l) in loads.iter().enumerate() {
            rosters[l.substation].push(ElementRef::Load(i));
        }
        for (i, g) in generators.iter().enumerate() {
            rosters[g.substation].push(ElementRef::Generator(i));
        }
        for (i, l) in lines.iter().enumerate() {
            rosters[l.from].push(ElementRef::LineOrigin(i));
        }
        for (i, l) in lines.iter().enumerate() {
            rosters[l.to].push(ElementRef::LineExtremity(i));
        }
        let mut roster_offset = Vec::with_capacity(nsub + 1);
        let mut off = 0;
        let mut load_pos = vec![0; loads.len()];
        let mut gen_pos = vec![0; generators.len()];
        let mut line_or_pos = vec![0; lines.len()];
        let mut line_ex_pos = vec![0; lines.len()];
        for roster in &rosters {
            roster_offset.push(off);
            for (k, e) in roster.iter().enumerate() {
                let pos = off + k;
                match *e {
                    ElementRef::Load(i) => load_pos[i] = pos,
                    ElementRef::Generator(i) => gen_pos[i] = pos,
                    ElementRef::LineOrigin(i) => line_or_pos[i] = pos,
                    ElementRef::LineExtremity(i) => line_ex_pos[i] = pos,
                }
            }
            off += roster.len();
        }
        roster_offset.push(off);

        Ok(Self {
            base_mva,
            substations,
            lines,
            generators,
            loads,
            slack,
            rosters,
            roster_offset,
            load_pos,
            gen_pos,
            line_or_pos,
            line_ex_pos,
        })
    }

    /// Loads a case from disk, choosing the importer from the extension
    /// (`.m` for MATPOWER, anything else for the native JSON schema).
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, CaseError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CaseError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("m") => parse_matpower(&text, &MatpowerOptions::default()),
            _ => parse_native(&text),
        }
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn substations(&self) -> &[Substation] {
        &self.substations
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn loads(&self) -> &[Load] {
        &self.loads
    }

    pub fn n_substations(&self) -> usize {
        self.substations.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    /// Index of the slack generator.
    pub fn slack_generator(&self) -> usize {
        self.slack
    }

    pub fn roster(&self, substation: usize) -> &[ElementRef] {
        &self.rosters[substation]
    }

    /// Length of the global topology vector.
    pub fn topo_len(&self) -> usize {
        *self.roster_offset.last().unwrap_or(&0)
    }

    pub fn roster_offset(&self, substation: usize) -> usize {
        self.roster_offset[substation]
    }

    pub fn load_pos(&self, i: usize) -> usize {
        self.load_pos[i]
    }

    pub fn gen_pos(&self, i: usize) -> usize {
        self.gen_pos[i]
    }

    pub fn line_or_pos(&self, i: usize) -> usize {
        self.line_or_pos[i]
    }

    pub fn line_ex_pos(&self, i: usize) -> usize {
        self.line_ex_pos[i]
    }

    /// Lines incident to a substation (either end), ascending.
    pub fn lines_at(&self, substation: usize) -> Vec<usize> {
        self.rosters[substation]
            .iter()
            .filter_map(|e| match *e {
                ElementRef::LineOrigin(i) | ElementRef::LineExtremity(i) => Some(i),
                _ => None,
            })
            .collect()
    }

    /// Hop distance between substations over the full line graph (all lines
    /// in service). `usize::MAX` for unreachable pairs.
    pub fn substation_distances(&self) -> Vec<Vec<usize>> {
        let n = self.n_substations();
        let mut adj = vec![Vec::new(); n];
        for l in &self.lines {
            adj[l.from].push(l.to);
            adj[l.to].push(l.from);
        }
        (0..n)
            .map(|src| {
                let mut dist = vec![usize::MAX; n];
                let mut queue = std::collections::VecDeque::from([src]);
                dist[src] = 0;
                while let Some(u) = queue.pop_front() {
                    for &v in &adj[u] {
                        if dist[v] == usize::MAX {
                            dist[v] = dist[u] + 1;
                            queue.push_back(v);
                        }
                    }
                }
                dist
            })
            .collect()
    }
}
