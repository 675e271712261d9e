//! Experiment description language: nodes, tasks, stages, pipelines and
//! experiments, plus the pure operations that compose and validate them.
//!
//! Every value here is immutable once built; composition (`then`, `map`)
//! returns new values.

mod experiment;
mod node;
mod pipeline;
mod result;
mod task;
mod validate;

use thiserror::Error;

pub use experiment::{
    is_lifecycle_legal, is_reachable, Assignment, DeployStrictness, Experiment, ExperimentStatus, Policies,
    DEFAULT_EXPERIMENT_TIMEOUT_S,
};
pub use node::{NodeDescriptor, NodeKind, NodePool, PoolError};
pub use pipeline::{Pipeline, Stage};
pub use result::{Outcome, Payload, TaskResult};
pub use task::{
    BinaryRequirement, EnvironmentRequirement, ParamValue, Params, StagedFile, TaskSpec, DEFAULT_TASK_TIMEOUT_S,
};
pub(crate) use validate::valid_identifier;
pub use validate::{validate_experiment, ValidationError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("task name `{0}` already used in pipeline")]
    DuplicateTaskName(String),
    #[error("stage {stage} has no tasks")]
    EmptyStage { stage: usize },
    #[error("node `{0}` is already assigned in this experiment")]
    NodeAlreadyAssigned(String),
    #[error("pipeline `{pipeline}` mapped to an empty node list")]
    EmptyNodeList { pipeline: String },
}
