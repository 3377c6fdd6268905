//! The surrogate contract, a DC baseline and hard-constraint post-processing.

mod dc;
mod kkt;

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::grid::{GridCase, Topology};
use crate::metrics::{MetricError, PredictionSet};
use crate::powerflow::{Injections, PowerFlowError};

pub use dc::DcBaseline;
pub use kkt::{
    apply_hard_zero_mask, build_conservation_constraints, kkt_project, project_predictions, ConstraintMatrix,
    LinearConstraintSystem, ProjectionCache, ProjectionReport,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SurrogateError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("constraint system is rank deficient (pivot {pivot:.3e} at row {row})")]
    RankDeficient { row: usize, pivot: f64 },
    #[error("node {node} has no connected line but a net injection of {injection} MW")]
    Infeasible { node: usize, injection: f64 },
    #[error("model used before fit")]
    NotFitted,
    #[error("sample {sample}: {source}")]
    Solver {
        sample: usize,
        #[source]
        source: PowerFlowError,
    },
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Input groups a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Capabilities {
    pub injections: bool,
    pub topology: bool,
    pub physics: bool,
}

/// A batch of model inputs, one entry per sample.
#[derive(Debug, Clone, Copy)]
pub struct InputBatch<'a> {
    pub case: &'a GridCase,
    pub injections: &'a [Injections],
    pub topologies: &'a [Topology],
}

impl InputBatch<'_> {
    pub fn len(&self) -> usize {
        self.injections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.injections.is_empty()
    }

    pub fn check(&self) -> Result<(), SurrogateError> {
        if self.injections.len() != self.topologies.len() {
            return Err(SurrogateError::Dimension(format!(
                "{} injection sets but {} topologies",
                self.injections.len(),
                self.topologies.len()
            )));
        }
        Ok(())
    }
}

/// Augmented simulator: learns from solved samples, predicts line outputs.
pub trait Surrogate {
    fn name(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    fn fit(&mut self, inputs: &InputBatch<'_>, outputs: &PredictionSet) -> Result<(), SurrogateError>;

    /// Must be deterministic once fitted.
    fn predict(&self, inputs: &InputBatch<'_>) -> Result<PredictionSet, SurrogateError>;
}

/// `predict` with its wall-clock time.
pub fn timed_predict<S: Surrogate + ?Sized>(
    model: &S,
    inputs: &InputBatch<'_>,
) -> Result<(PredictionSet, Duration), SurrogateError> {
    let start = Instant::now();
    let out = model.predict(inputs)?;
    Ok((out, start.elapsed()))
}

#[cfg(test)]
mod tests;
