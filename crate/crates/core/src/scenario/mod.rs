//! Seeded two-stage topology sampling and dataset generation.
//!
//! A sample first draws from the shared reference busbar actions, then from
//! the split's own parameters (line disconnections). Injections come from a
//! separate stream, so the topology sequence of a split does not depend on
//! the injection model.

mod config;
mod dataset;
mod io;
mod sample;

use thiserror::Error;

pub use config::{
    GenerationParams, InjectionParams, ReferenceArgs, Region, Samples, ScenarioConfig, Seeds, SetBus, Split,
    StageParams,
};
pub use dataset::{generate_dataset, generate_dataset_with, loss_ratio, physics_attributes, Dataset, GenerateOptions, PhysicsAttributes, Sample};
pub use io::{
    read_dataset, read_manifest, read_predictions, read_ybus, write_dataset, write_predictions, DatasetManifest,
    StoredDataset, INPUTS, MANIFEST,
};
pub use sample::{lines_in_region, sample_injections, sample_scenario, Scenario, ScenarioSampler, SplitRng};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScenarioError {
    #[error("invalid config key {key}: {reason}")]
    Config { key: String, reason: String },
    #[error("unknown split {0:?}")]
    UnknownSplit(String),
    #[error("split {split} is unsatisfiable: {reason}")]
    Unsatisfiable { split: Split, reason: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}
