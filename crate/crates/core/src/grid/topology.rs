//! Busbar assignments, line statuses and the electrical node set they induce.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ElementRef, GridCase};

/// Busbars available in every substation.
pub const MAX_BUSBARS: i8 = 2;

/// Busbar marker for a line end that is not attached anywhere.
pub const UNASSIGNED: i8 = -1;

/// Per-sample grid configuration.
///
/// `busbar` follows the case's global topology-vector order and holds 1 or 2
/// for every attached element; line ends of disconnected lines may carry
/// [`UNASSIGNED`]. Disconnecting a line keeps its busbar assignment.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Topology {
    pub busbar: Vec<i8>,
    pub line_status: Vec<bool>,
}

/// A single grid action.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyAction {
    /// Replace the busbar tuple of one substation (roster order).
    SetBus { substation: usize, busbars: Vec<i8> },
    DisconnectLine(usize),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("unknown substation {0}")]
    UnknownSubstation(usize),
    #[error("unknown line {0}")]
    UnknownLine(usize),
    #[error("substation {substation} has {expected} elements but the busbar tuple has {got}")]
    TupleLength {
        substation: usize,
        expected: usize,
        got: usize,
    },
    #[error("busbar value {value} at substation {substation} is outside 1..={MAX_BUSBARS}")]
    BusbarValue { substation: usize, value: i8 },
    #[error("topology dimensions do not match the case (topo {topo} vs {expected}, lines {lines} vs {n_lines})")]
    Dimensions {
        topo: usize,
        expected: usize,
        lines: usize,
        n_lines: usize,
    },
}

impl Topology {
    /// Every element on busbar 1, every line in service.
    pub fn reference(case: &GridCase) -> Self {
        Self {
            busbar: vec![1; case.topo_len()],
            line_status: vec![true; case.n_lines()],
        }
    }

    pub fn check_dimensions(&self, case: &GridCase) -> Result<(), TopologyError> {
        if self.busbar.len() != case.topo_len() || self.line_status.len() != case.n_lines() {
            return Err(TopologyError::Dimensions {
                topo: self.busbar.len(),
                expected: case.topo_len(),
                lines: self.line_status.len(),
                n_lines: case.n_lines(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, case: &GridCase, action: &TopologyAction) -> Result<Self, TopologyError> {
        apply_topology_action(case, self, action)
    }

    /// Busbar tuple of one substation in roster order.
    pub fn substation_busbars(&self, case: &GridCase, substation: usize) -> &[i8] {
        let start = case.roster_offset(substation);
        &self.busbar[start..start + case.roster(substation).len()]
    }

    pub fn disconnected_lines(&self) -> Vec<usize> {
        self.line_status
            .iter()
            .enumerate()
            .filter(|(_, &s)| !s)
            .map(|(i, _)| i)
            .collect()
    }

    /// Busbar (1 or 2) of the element at global position `pos`, or `None`
    /// when unattached.
    fn attached(&self, pos: usize) -> Option<u8> {
        match self.busbar[pos] {
            b @ 1..=MAX_BUSBARS => Some(b as u8),
            _ => None,
        }
    }

    /// Busbars at both ends of an in-service line.
    pub fn line_ends(&self, case: &GridCase, line: usize) -> Option<(u8, u8)> {
        if !self.line_status[line] {
            return None;
        }
        Some((
            self.attached(case.line_or_pos(line))?,
            self.attached(case.line_ex_pos(line))?,
        ))
    }
}

pub fn apply_topology_action(
    case: &GridCase,
    base: &Topology,
    action: &TopologyAction,
) -> Result<Topology, TopologyError> {
    base.check_dimensions(case)?;
    let mut next = base.clone();
    match action {
        TopologyAction::SetBus {
            substation,
            busbars,
        } => {
            let sub = *substation;
            if sub >= case.n_substations() {
                return Err(TopologyError::UnknownSubstation(sub));
            }
            let expected = case.roster(sub).len();
            if busbars.len() != expected {
                return Err(TopologyError::TupleLength {
                    substation: sub,
                    expected,
                    got: busbars.len(),
                });
            }
            if let Some(&value) = busbars.iter().find(|&&b| !(1..=MAX_BUSBARS).contains(&b)) {
                return Err(TopologyError::BusbarValue {
                    substation: sub,
                    value,
                });
            }
            let start = case.roster_offset(sub);
            next.busbar[start..start + expected].copy_from_slice(busbars);
        }
        TopologyAction::DisconnectLine(line) => {
            if *line >= case.n_lines() {
                return Err(TopologyError::UnknownLine(*line));
            }
            next.line_status[*line] = false;
        }
    }
    Ok(next)
}

/// Map between electrical nodes and `(substation, busbar)` pairs.
///
/// A node exists for every busbar that hosts at least one energized element
/// (a load, a generator, or an end of an in-service line). Nodes are numbered
/// in `(substation, busbar)` order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeMap {
    nodes: Vec<(usize, u8)>,
    lookup: Vec<[Option<usize>; 2]>,
}

impl NodeMap {
    pub fn from_topology(case: &GridCase, topo: &Topology) -> Self {
        let mut used = vec![[false; 2]; case.n_substations()];
        for (i, l) in case.loads().iter().enumerate() {
            if let Some(b) = topo.attached(case.load_pos(i)) {
                used[l.substation][b as usize - 1] = true;
            }
        }
        for (i, g) in case.generators().iter().enumerate() {
            if let Some(b) = topo.attached(case.gen_pos(i)) {
                used[g.substation][b as usize - 1] = true;
            }
        }
        for (i, l) in case.lines().iter().enumerate() {
            if let Some((bo, be)) = topo.line_ends(case, i) {
                used[l.from][bo as usize - 1] = true;
                used[l.to][be as usize - 1] = true;
            }
        }
        Self::from_used(&used)
    }

    fn from_used(used: &[[bool; 2]]) -> Self {
        let mut nodes = Vec::new();
        let mut lookup = vec![[None; 2]; used.len()];
        for (sub, flags) in used.iter().enumerate() {
            for (k, &u) in flags.iter().enumerate() {
                if u {
                    lookup[sub][k] = Some(nodes.len());
                    nodes.push((sub, k as u8 + 1));
                }
            }
        }
        Self { nodes, lookup }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[(usize, u8)] {
        &self.nodes
    }

    pub fn node(&self, substation: usize, busbar: u8) -> Option<usize> {
        match busbar {
            1 | 2 => self.lookup.get(substation)?[busbar as usize - 1],
            _ => None,
        }
    }

    /// Node hosting the element at global topology position `pos`.
    pub fn node_of(&self, topo: &Topology, substation: usize, pos: usize) -> Option<usize> {
        self.node(substation, topo.attached(pos)?)
    }

    /// Node pair of an in-service line.
    pub fn line_nodes(&self, case: &GridCase, topo: &Topology, line: usize) -> Option<(usize, usize)> {
        let (bo, be) = topo.line_ends(case, line)?;
        let l = &case.lines()[line];
        Some((self.node(l.from, bo)?, self.node(l.to, be)?))
    }
}

/// Why a topology was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvalidTopology {
    #[error(transparent)]
    Shape(#[from] TopologyError),
    #[error("element {element:?} at substation {substation} is not attached to a busbar")]
    Unattached { substation: usize, element: ElementRef },
    #[error("the energized grid splits into {components} islands")]
    Islanded { components: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopologyVerdict {
    Valid,
    Invalid(InvalidTopology),
}

impl TopologyVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, TopologyVerdict::Valid)
    }

    pub fn into_result(self) -> Result<(), InvalidTopology> {
        match self {
            TopologyVerdict::Valid => Ok(()),
            TopologyVerdict::Invalid(e) => Err(e),
        }
    }
}

/// Accepts iff every load, generator and in-service line end sits on a
/// busbar and the energized node graph is a single connected component
/// (which then contains the slack).
pub fn validate_topology(case: &GridCase, topo: &Topology) -> TopologyVerdict {
    if let Err(e) = topo.check_dimensions(case) {
        return TopologyVerdict::Invalid(e.into());
    }
    for (sub, roster) in (0..case.n_substations()).map(|s| (s, case.roster(s))) {
        let start = case.roster_offset(sub);
        for (k, &element) in roster.iter().enumerate() {
            let value = topo.busbar[start + k];
            let needs_busbar = match element {
                ElementRef::Load(_) | ElementRef::Generator(_) => true,
                ElementRef::LineOrigin(l) | ElementRef::LineExtremity(l) => topo.line_status[l],
            };
            if value > MAX_BUSBARS || (value < 1 && value != UNASSIGNED) {
                return TopologyVerdict::Invalid(
                    TopologyError::BusbarValue {
                        substation: sub,
                        value,
                    }
                    .into(),
                );
            }
            if needs_busbar && value == UNASSIGNED {
                return TopologyVerdict::Invalid(InvalidTopology::Unattached {
                    substation: sub,
                    element,
                });
            }
        }
    }

    let nodes = NodeMap::from_topology(case, topo);
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut components = nodes.len();
    for line in 0..case.n_lines() {
        if let Some((a, b)) = nodes.line_nodes(case, topo, line) {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra] = rb;
                components -= 1;
            }
        }
    }
    if components != 1 {
        return TopologyVerdict::Invalid(InvalidTopology::Islanded { components });
    }
    TopologyVerdict::Valid
}
