//! Power-grid contingency screening and surrogate benchmarking.
//!
//! The crate covers the reference AC power flow, a batched many-scenario
//! contingency solver, seeded scenario/dataset generation, and the
//! accuracy/physics/speed-up scoring pipeline used to rank power-flow
//! surrogates.

pub mod contingency;
pub mod grid;
pub mod metrics;
pub mod powerflow;
pub mod scenario;
pub mod scoring;
pub mod sparse;
pub mod surrogate;

pub use contingency::{batch_solve, batch_solve_with, BatchOptions, BatchReport};
pub use grid::{load_case, GridCase, Topology, TopologyAction};
pub use metrics::{evaluate_ml, evaluate_physics, MlReport, PhysicsContext, PhysicsReport, PhysicsTolerances, PredictionSet, Quantity};
pub use powerflow::{solve_newton_raphson, Injections, PowerFlowError, PowerFlowSolution, SolverOptions};
pub use scenario::{ScenarioConfig, Split};
pub use scoring::{global_score, ScoreReport, ScoreWeights, ThresholdTable};
pub use surrogate::{DcBaseline, InputBatch, Surrogate};
