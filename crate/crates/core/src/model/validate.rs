use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Experiment, NodeKind};
use crate::compiler::{merge_environments, pipeline_requirements, EnvironmentConflict};
use crate::tasks::registry::TaskRegistry;

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum ValidationError {
    #[error("experiment id `{id}` must be non-empty and use only [A-Za-z0-9._-]")]
    InvalidExperimentId { id: String },
    #[error("pipeline id `{pipeline}` is used by two different pipelines")]
    PipelineIdClash { pipeline: String },
    #[error("pipeline `{pipeline}` has no stages")]
    EmptyPipeline { pipeline: String },
    #[error("pipeline `{pipeline}` stage {stage} has no tasks")]
    EmptyStage { pipeline: String, stage: usize },
    #[error("pipeline `{pipeline}` has an unnamed task in stage {stage}")]
    UnnamedTask { pipeline: String, stage: usize },
    #[error("pipeline `{pipeline}` uses task name `{task}` more than once")]
    DuplicateTaskName { pipeline: String, task: String },
    #[error("task `{task}` in pipeline `{pipeline}` has non-positive timeout {timeout_s}")]
    NonPositiveTimeout { pipeline: String, task: String, timeout_s: String },
    #[error("task `{task}` in pipeline `{pipeline}` has unknown task type `{task_type}`")]
    UnknownTaskType { pipeline: String, task: String, task_type: String },
    #[error("task `{task}` ({task_type}) in pipeline `{pipeline}` has no implementation for {kind} node `{node}`")]
    UnsupportedTaskForKind { pipeline: String, task: String, task_type: String, kind: NodeKind, node: String },
    #[error("pipeline `{pipeline}` mapped to an empty node list")]
    EmptyNodeList { pipeline: String },
    #[error("node `{node}` is assigned more than once")]
    NodeAssignedTwice { node: String },
    #[error("pipeline `{pipeline}` on {kind}: {conflict}")]
    EnvironmentConflict { pipeline: String, kind: NodeKind, conflict: EnvironmentConflict },
    #[error("experiment timeout must be positive, got {timeout_s}")]
    NonPositiveExperimentTimeout { timeout_s: String },
}

pub(crate) fn valid_identifier(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

/// Collects every problem with `exp`; an empty list means it can be compiled.
pub fn validate_experiment(exp: &Experiment, registry: &TaskRegistry) -> Result<(), Vec<ValidationError>> {
    let mut errors = Vec::new();

    if !valid_identifier(&exp.experiment_id) {
        errors.push(ValidationError::InvalidExperimentId { id: exp.experiment_id.clone() });
    }
    if !(exp.policies.experiment_timeout_s > 0.0) {
        errors.push(ValidationError::NonPositiveExperimentTimeout {
            timeout_s: exp.policies.experiment_timeout_s.to_string(),
        });
    }

    let mut by_id: HashMap<&str, &super::Pipeline> = HashMap::new();
    let mut seen_nodes: HashSet<&str> = HashSet::new();
    for a in &exp.assignments {
        let p = &a.pipeline;
        match by_id.get(p.pipeline_id.as_str()) {
            Some(existing) if *existing != p => {
                errors.push(ValidationError::PipelineIdClash { pipeline: p.pipeline_id.clone() })
            }
            _ => {
                by_id.insert(&p.pipeline_id, p);
            }
        }
        if a.nodes.is_empty() {
            errors.push(ValidationError::EmptyNodeList { pipeline: p.pipeline_id.clone() });
        }
        for n in &a.nodes {
            if !seen_nodes.insert(&n.node_id) {
                errors.push(ValidationError::NodeAssignedTwice { node: n.node_id.clone() });
            }
        }

        if p.stages.is_empty() {
            errors.push(ValidationError::EmptyPipeline { pipeline: p.pipeline_id.clone() });
        }
        let mut names = HashSet::new();
        for (i, stage) in p.stages.iter().enumerate() {
            if stage.tasks.is_empty() {
                errors.push(ValidationError::EmptyStage { pipeline: p.pipeline_id.clone(), stage: i });
            }
            for t in &stage.tasks {
                if t.name.is_empty() {
                    errors.push(ValidationError::UnnamedTask { pipeline: p.pipeline_id.clone(), stage: i });
                } else if !names.insert(t.name.as_str()) {
                    errors.push(ValidationError::DuplicateTaskName {
                        pipeline: p.pipeline_id.clone(),
                        task: t.name.clone(),
                    });
                }
                if !(t.timeout_s > 0.0) {
                    errors.push(ValidationError::NonPositiveTimeout {
                        pipeline: p.pipeline_id.clone(),
                        task: t.name.clone(),
                        timeout_s: t.timeout_s.to_string(),
                    });
                }
                if !registry.knows(&t.task_type) {
                    errors.push(ValidationError::UnknownTaskType {
                        pipeline: p.pipeline_id.clone(),
                        task: t.name.clone(),
                        task_type: t.task_type.clone(),
                    });
                    continue;
                }
                for n in &a.nodes {
                    if registry.resolve(&t.task_type, n.kind).is_err() {
                        errors.push(ValidationError::UnsupportedTaskForKind {
                            pipeline: p.pipeline_id.clone(),
                            task: t.name.clone(),
                            task_type: t.task_type.clone(),
                            kind: n.kind,
                            node: n.node_id.clone(),
                        });
                    }
                }
            }
        }

        let kinds: BTreeSet<NodeKind> = a.nodes.iter().map(|n| n.kind).collect();
        for kind in kinds {
            // Unresolvable tasks were reported above.
            if let Ok(reqs) = pipeline_requirements(p, kind, registry) {
                if let Err(conflict) = merge_environments(reqs) {
                    errors.push(ValidationError::EnvironmentConflict {
                        pipeline: p.pipeline_id.clone(),
                        kind,
                        conflict,
                    });
                }
            }
        }
    }

    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EnvironmentRequirement, NodeDescriptor, Pipeline, TaskSpec};

    fn sim(id: &str) -> NodeDescriptor {
        NodeDescriptor::new(id, NodeKind::Simulated, "sim")
    }

    #[test]
    fn unknown_task_type_reported_once() {
        let p = Pipeline::new("p").then([TaskSpec::new("patator").named("attack")]).unwrap();
        let exp = Experiment::new("e").map(&p, &[sim("a"), sim("b")]).unwrap();
        let errs = validate_experiment(&exp, &TaskRegistry::builtin()).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].to_string().contains("attack"));
    }

    #[test]
    fn conflicting_binary_versions() {
        let p = Pipeline::new("p")
            .then([
                TaskSpec::shell("a").named("a").requires(EnvironmentRequirement::default().binary("x", Some("1"))),
                TaskSpec::shell("b").named("b").requires(EnvironmentRequirement::default().binary("x", Some("2"))),
            ])
            .unwrap();
        let exp = Experiment::new("e").map(&p, &[sim("a")]).unwrap();
        let errs = validate_experiment(&exp, &TaskRegistry::builtin()).unwrap_err();
        assert!(matches!(errs[..], [ValidationError::EnvironmentConflict { .. }]));
    }

    #[test]
    fn hand_built_violations_are_all_listed() {
        let mut p = Pipeline::new("p").then([TaskSpec::sleep(1.0).named("s")]).unwrap();
        p.stages[0].tasks.push(TaskSpec::sleep(1.0).named("s").timeout(0.0));
        let mut exp = Experiment::new("bad id").map(&p, &[sim("a")]).unwrap();
        exp.assignments.push(crate::model::Assignment { pipeline: p.clone(), nodes: vec![sim("a")] });
        let errs = validate_experiment(&exp, &TaskRegistry::builtin()).unwrap_err();
        let has = |f: fn(&ValidationError) -> bool| errs.iter().any(f);
        assert!(has(|e| matches!(e, ValidationError::InvalidExperimentId { .. })));
        assert!(has(|e| matches!(e, ValidationError::DuplicateTaskName { .. })));
        assert!(has(|e| matches!(e, ValidationError::NonPositiveTimeout { .. })));
        assert!(has(|e| matches!(e, ValidationError::NodeAssignedTwice { .. })));
    }
}
