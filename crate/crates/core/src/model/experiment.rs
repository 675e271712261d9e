use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ModelError, NodeDescriptor, Pipeline};

pub const DEFAULT_EXPERIMENT_TIMEOUT_S: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExperimentStatus {
    Submitted,
    Compiling,
    Deploying,
    Ready,
    Running,
    Finished,
    Failed,
    Cancelled,
}

impl ExperimentStatus {
    pub const ALL: [ExperimentStatus; 8] = [
        ExperimentStatus::Submitted,
        ExperimentStatus::Compiling,
        ExperimentStatus::Deploying,
        ExperimentStatus::Ready,
        ExperimentStatus::Running,
        ExperimentStatus::Finished,
        ExperimentStatus::Failed,
        ExperimentStatus::Cancelled,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, ExperimentStatus::Finished | ExperimentStatus::Failed | ExperimentStatus::Cancelled)
    }

    /// The lifecycle edge relation.
    ///
    /// `COMPILING -> FAILED` is included so a compile error can fail the
    /// experiment without passing through `DEPLOYING`.
    pub fn can_transition_to(self, to: ExperimentStatus) -> bool {
        use ExperimentStatus::*;
        if to == Cancelled {
            return !self.is_terminal();
        }
        matches!(
            (self, to),
            (Submitted, Compiling)
                | (Compiling, Deploying)
                | (Compiling, Failed)
                | (Deploying, Ready)
                | (Deploying, Failed)
                | (Ready, Running)
                | (Running, Finished)
                | (Running, Failed)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentStatus::Submitted => "SUBMITTED",
            ExperimentStatus::Compiling => "COMPILING",
            ExperimentStatus::Deploying => "DEPLOYING",
            ExperimentStatus::Ready => "READY",
            ExperimentStatus::Running => "RUNNING",
            ExperimentStatus::Finished => "FINISHED",
            ExperimentStatus::Failed => "FAILED",
            ExperimentStatus::Cancelled => "CANCELLED",
        }
    }
}

impl fmt::Display for ExperimentStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Checks that a status sequence only follows lifecycle edges. Repeated
/// observations of the same status are allowed (polling).
pub fn is_lifecycle_legal(observed: &[ExperimentStatus]) -> bool {
    observed.windows(2).all(|w| w[0] == w[1] || w[0].can_transition_to(w[1]))
}

/// Whether `to` is reachable from `from` along lifecycle edges (including
/// staying put). Polling may skip intermediate statuses.
pub fn is_reachable(from: ExperimentStatus, to: ExperimentStatus) -> bool {
    let mut frontier = vec![from];
    let mut seen = HashSet::new();
    while let Some(s) = frontier.pop() {
        if s == to {
            return true;
        }
        if seen.insert(s) {
            frontier.extend(ExperimentStatus::ALL.into_iter().filter(|n| s.can_transition_to(*n)));
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeployStrictness {
    #[default]
    AllOrNothing,
    BestEffort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policies {
    #[serde(default)]
    pub deploy_strictness: DeployStrictness,
    #[serde(default = "default_experiment_timeout")]
    pub experiment_timeout_s: f64,
}

fn default_experiment_timeout() -> f64 {
    DEFAULT_EXPERIMENT_TIMEOUT_S
}

impl Default for Policies {
    fn default() -> Self {
        Self { deploy_strictness: DeployStrictness::default(), experiment_timeout_s: DEFAULT_EXPERIMENT_TIMEOUT_S }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub pipeline: Pipeline,
    pub nodes: Vec<NodeDescriptor>,
}

/// Pipelines mapped onto nodes. Lifecycle status is tracked by the director,
/// not by this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub experiment_id: String,
    #[serde(default)]
    pub assignments: Vec<Assignment>,
    #[serde(default)]
    pub policies: Policies,
}

impl Experiment {
    pub fn new(experiment_id: impl Into<String>) -> Self {
        Self { experiment_id: experiment_id.into(), assignments: Vec::new(), policies: Policies::default() }
    }

    pub fn with_policies(mut self, policies: Policies) -> Self {
        self.policies = policies;
        self
    }

    /// Returns a copy with `pipeline` assigned to `nodes`. Compiler picks task
    /// implementations later.
    pub fn map(&self, pipeline: &Pipeline, nodes: &[NodeDescriptor]) -> Result<Experiment, ModelError> {
        if nodes.is_empty() {
            return Err(ModelError::EmptyNodeList { pipeline: pipeline.pipeline_id.clone() });
        }
        let mut taken: HashSet<&str> = self.nodes().map(|n| n.node_id.as_str()).collect();
        for n in nodes {
            if !taken.insert(n.node_id.as_str()) {
                return Err(ModelError::NodeAlreadyAssigned(n.node_id.clone()));
            }
        }
        let mut next = self.clone();
        next.assignments.push(Assignment { pipeline: pipeline.clone(), nodes: nodes.to_vec() });
        Ok(next)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeDescriptor> {
        self.assignments.iter().flat_map(|a| a.nodes.iter())
    }

    /// (pipeline, node) pairs in assignment order.
    pub fn placements(&self) -> impl Iterator<Item = (&Pipeline, &NodeDescriptor)> {
        self.assignments.iter().flat_map(|a| a.nodes.iter().map(move |n| (&a.pipeline, n)))
    }

    pub fn assignment_for(&self, node_id: &str) -> Option<&Assignment> {
        self.assignments.iter().find(|a| a.nodes.iter().any(|n| n.node_id == node_id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NodeKind, TaskSpec};
    use ExperimentStatus::*;

    fn node(id: &str) -> NodeDescriptor {
        NodeDescriptor::new(id, NodeKind::Simulated, "sim")
    }

    #[test]
    fn map_three_pipelines() {
        let p1 = Pipeline::new("p1").then([TaskSpec::shell("serve")]).unwrap();
        let p2 = Pipeline::new("p2").then([TaskSpec::shell("attack")]).unwrap();
        let p3 = Pipeline::new("p3").then([TaskSpec::shell("browse")]).unwrap();
        let e = Experiment::new("e")
            .map(&p1, &[node("server")])
            .unwrap()
            .map(&p2, &[node("a1"), node("a2")])
            .unwrap()
            .map(&p3, &[node("b1"), node("b2")])
            .unwrap();
        assert_eq!(e.assignments.len(), 3);
        assert_eq!(e.nodes().count(), 5);
    }

    #[test]
    fn map_rejects_reuse_and_empty() {
        let p = Pipeline::new("p").then([TaskSpec::sleep(1.0)]).unwrap();
        let e = Experiment::new("e").map(&p, &[node("n")]).unwrap();
        assert_eq!(e.map(&p, &[node("n")]), Err(ModelError::NodeAlreadyAssigned("n".into())));
        assert_eq!(e.map(&p, &[]), Err(ModelError::EmptyNodeList { pipeline: "p".into() }));
        assert_eq!(
            Experiment::new("e").map(&p, &[node("x"), node("x")]),
            Err(ModelError::NodeAlreadyAssigned("x".into()))
        );
    }

    #[test]
    fn twenty_disjoint_assignments() {
        let p = Pipeline::new("p").then([TaskSpec::sleep(1.0)]).unwrap();
        let mut e = Experiment::new("e");
        for i in 0..20 {
            e = e.map(&p, &[node(&format!("n{i}"))]).unwrap();
        }
        assert_eq!(e.assignments.len(), 20);
        let distinct: HashSet<_> = e.nodes().map(|n| n.node_id.clone()).collect();
        assert_eq!(distinct.len(), 20);
    }

    #[test]
    fn edge_relation() {
        assert!(Submitted.can_transition_to(Compiling));
        assert!(Deploying.can_transition_to(Ready));
        assert!(Running.can_transition_to(Finished));
        assert!(Ready.can_transition_to(Cancelled));
        assert!(!Finished.can_transition_to(Cancelled));
        assert!(!Submitted.can_transition_to(Running));
        assert!(!Ready.can_transition_to(Failed));
        assert!(is_lifecycle_legal(&[Submitted, Submitted, Compiling, Deploying, Ready, Running, Running, Finished]));
        assert!(!is_lifecycle_legal(&[Submitted, Ready]));
        assert!(is_reachable(Submitted, Finished));
        assert!(!is_reachable(Running, Ready));
    }
}
