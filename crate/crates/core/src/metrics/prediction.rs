use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::powerflow::LineFlows;

/// A per-line output quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    AOr,
    AEx,
    POr,
    PEx,
    QOr,
    QEx,
    VOr,
    VEx,
    ThetaOr,
    ThetaEx,
}

impl Quantity {
    pub const ALL: [Quantity; 10] = [
        Quantity::AOr,
        Quantity::AEx,
        Quantity::POr,
        Quantity::PEx,
        Quantity::QOr,
        Quantity::QEx,
        Quantity::VOr,
        Quantity::VEx,
        Quantity::ThetaOr,
        Quantity::ThetaEx,
    ];

    /// Columns every prediction must carry.
    pub const REQUIRED: [Quantity; 6] = [
        Quantity::AOr,
        Quantity::AEx,
        Quantity::POr,
        Quantity::PEx,
        Quantity::VOr,
        Quantity::VEx,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::AOr => "a_or",
            Quantity::AEx => "a_ex",
            Quantity::POr => "p_or",
            Quantity::PEx => "p_ex",
            Quantity::QOr => "q_or",
            Quantity::QEx => "q_ex",
            Quantity::VOr => "v_or",
            Quantity::VEx => "v_ex",
            Quantity::ThetaOr => "theta_or",
            Quantity::ThetaEx => "theta_ex",
        }
    }

    /// Flow quantities that must vanish on a disconnected line.
    pub fn is_flow(self) -> bool {
        matches!(
            self,
            Quantity::AOr | Quantity::AEx | Quantity::POr | Quantity::PEx | Quantity::QOr | Quantity::QEx
        )
    }

    fn of(flows: &LineFlows, q: Quantity) -> &[f64] {
        match q {
            Quantity::AOr => &flows.a_or,
            Quantity::AEx => &flows.a_ex,
            Quantity::POr => &flows.p_or,
            Quantity::PEx => &flows.p_ex,
            Quantity::QOr => &flows.q_or,
            Quantity::QEx => &flows.q_ex,
            Quantity::VOr => &flows.v_or,
            Quantity::VEx => &flows.v_ex,
            Quantity::ThetaOr => &flows.theta_or,
            Quantity::ThetaEx => &flows.theta_ex,
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Quantity {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Quantity::ALL
            .into_iter()
            .find(|q| q.name() == s)
            .ok_or_else(|| MetricError::UnknownQuantity(s.to_string()))
    }
}

/// Per-sample, per-line values of some quantities, sample-major.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionSet {
    n_lines: usize,
    n_samples: usize,
    columns: BTreeMap<Quantity, Vec<f64>>,
}

impl PredictionSet {
    pub fn new(n_lines: usize, quantities: &[Quantity]) -> Self {
        Self {
            n_lines,
            n_samples: 0,
            columns: quantities.iter().map(|&q| (q, Vec::new())).collect(),
        }
    }

    /// All ten quantities of the given solutions.
    pub fn from_flows<'a>(n_lines: usize, flows: impl IntoIterator<Item = &'a LineFlows>) -> Self {
        let mut set = Self::new(n_lines, &Quantity::ALL);
        for f in flows {
            set.push_flows(f);
        }
        set
    }

    /// Builds from whole columns. Every column must hold `n_samples × n_lines`
    /// values.
    pub fn from_columns(n_lines: usize, columns: BTreeMap<Quantity, Vec<f64>>) -> Result<Self, MetricError> {
        let len = columns.values().next().map_or(0, Vec::len);
        if n_lines == 0 && len > 0 || n_lines > 0 && len % n_lines != 0 {
            return Err(MetricError::Shape(format!("{len} values do not split into rows of {n_lines}")));
        }
        if let Some((q, c)) = columns.iter().find(|(_, c)| c.len() != len) {
            return Err(MetricError::Shape(format!("column {q} has {} values, expected {len}", c.len())));
        }
        Ok(Self {
            n_lines,
            n_samples: if n_lines == 0 { 0 } else { len / n_lines },
            columns,
        })
    }

    pub fn push_flows(&mut self, flows: &LineFlows) {
        assert_eq!(flows.len(), self.n_lines, "line count");
        for (q, col) in self.columns.iter_mut() {
            col.extend_from_slice(Quantity::of(flows, *q));
        }
        self.n_samples += 1;
    }

    pub fn n_lines(&self) -> usize {
        self.n_lines
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn quantities(&self) -> impl Iterator<Item = Quantity> + '_ {
        self.columns.keys().copied()
    }

    pub fn has(&self, q: Quantity) -> bool {
        self.columns.contains_key(&q)
    }

    /// Whole flattened column.
    pub fn column(&self, q: Quantity) -> Option<&[f64]> {
        self.columns.get(&q).map(Vec::as_slice)
    }

    pub fn column_mut(&mut self, q: Quantity) -> Option<&mut [f64]> {
        self.columns.get_mut(&q).map(Vec::as_mut_slice)
    }

    pub fn require(&self, q: Quantity) -> Result<&[f64], MetricError> {
        self.column(q).ok_or(MetricError::MissingQuantity(q))
    }

    /// One sample's row of a quantity.
    pub fn row(&self, q: Quantity, sample: usize) -> Option<&[f64]> {
        let n = self.n_lines;
        self.column(q).map(|c| &c[sample * n..(sample + 1) * n])
    }

    pub fn row_mut(&mut self, q: Quantity, sample: usize) -> Option<&mut [f64]> {
        let n = self.n_lines;
        self.column_mut(q).map(|c| &mut c[sample * n..(sample + 1) * n])
    }

    /// Samples `[start, end)` as a new set.
    pub fn slice(&self, start: usize, end: usize) -> PredictionSet {
        let n = self.n_lines;
        PredictionSet {
            n_lines: n,
            n_samples: end - start,
            columns: self
                .columns
                .iter()
                .map(|(&q, c)| (q, c[start * n..end * n].to_vec()))
                .collect(),
        }
    }

    /// Appends the samples of `other`, which must hold the same quantities.
    pub fn append(&mut self, other: &PredictionSet) -> Result<(), MetricError> {
        if other.n_lines != self.n_lines || !other.columns.keys().eq(self.columns.keys()) {
            return Err(MetricError::Shape("appended set differs in lines or quantities".into()));
        }
        for (q, c) in self.columns.iter_mut() {
            c.extend_from_slice(&other.columns[q]);
        }
        self.n_samples += other.n_samples;
        Ok(())
    }

    /// Samples in the given order.
    pub fn select(&self, order: &[usize]) -> PredictionSet {
        let n = self.n_lines;
        PredictionSet {
            n_lines: n,
            n_samples: order.len(),
            columns: self
                .columns
                .iter()
                .map(|(&q, c)| (q, order.iter().flat_map(|&s| c[s * n..(s + 1) * n].iter().copied()).collect()))
                .collect(),
        }
    }

    /// Keeps only the listed quantities (those present).
    pub fn restrict(&self, quantities: &[Quantity]) -> PredictionSet {
        PredictionSet {
            n_lines: self.n_lines,
            n_samples: self.n_samples,
            columns: self
                .columns
                .iter()
                .filter(|(q, _)| quantities.contains(q))
                .map(|(&q, c)| (q, c.clone()))
                .collect(),
        }
    }

    /// Same shape as `truth` on the required quantities, all values finite.
    pub fn check_against(&self, truth: &PredictionSet) -> Result<(), MetricError> {
        if (self.n_samples, self.n_lines) != (truth.n_samples, truth.n_lines) {
            return Err(MetricError::Shape(format!(
                "prediction is {}×{}, truth is {}×{}",
                self.n_samples, self.n_lines, truth.n_samples, truth.n_lines
            )));
        }
        for q in Quantity::REQUIRED {
            self.require(q)?;
            truth.require(q)?;
        }
        for (q, c) in &self.columns {
            if let Some(i) = c.iter().position(|v| !v.is_finite()) {
                return Err(MetricError::NonFinite {
                    quantity: *q,
                    sample: i / self.n_lines.max(1),
                    line: i % self.n_lines.max(1),
                });
            }
        }
        Ok(())
    }
}
