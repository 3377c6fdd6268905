//! Accuracy and physics-compliance metrics of predicted power flows.

mod ml;
mod physics;
mod prediction;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ml::{evaluate_ml, mae, mape, mape_top_quantile, quantile_sorted, Mape, MlReport};
pub use physics::{
    evaluate_physics, evaluate_physics_batched, JouleForm, PhysicsContext, PhysicsReport, PhysicsTolerances,
};
pub use prediction::{PredictionSet, Quantity};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no entries selected")]
    EmptySelection,
    #[error("quantity {0} is missing")]
    MissingQuantity(Quantity),
    #[error("unknown quantity {0:?}")]
    UnknownQuantity(String),
    #[error("{quantity} is not finite at sample {sample}, line {line}")]
    NonFinite {
        quantity: Quantity,
        sample: usize,
        line: usize,
    },
    #[error("missing evaluation context: {0}")]
    MissingContext(String),
}

/// One serialized metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub name: String,
    pub value: f64,
    pub unit: String,
}
