use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clock::{wall_now_ns, Timestamp};
use crate::compiler::DeploymentPlan;
use crate::connectivity::{CleanupOutcome, LaunchHandle};
use crate::executor::PipelineReport;
use crate::gateway::FlagRecord;
use crate::model::{Experiment, ExperimentStatus, NodeDescriptor, Outcome, TaskResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeployState {
    Pending,
    Prepared,
    PrepareFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecState {
    Idle,
    Running,
    Reported,
    Unreachable,
    TimedOut,
}

impl ExecState {
    /// The node will not produce anything further for this experiment.
    pub fn is_settled(self) -> bool {
        matches!(self, ExecState::Reported | ExecState::Unreachable | ExecState::TimedOut)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node: NodeDescriptor,
    pub pipeline_id: String,
    pub deployment: DeployState,
    pub execution: ExecState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exec_token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub launch: Option<LaunchHandle>,
    /// Report arrived after the node was marked timed-out or unreachable.
    #[serde(default)]
    pub late: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cleanup: Option<CleanupOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<ExperimentStatus>,
    pub to: ExperimentStatus,
    pub at_ns: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredReport {
    pub bundle_digest: String,
    pub started_at: Timestamp,
    pub finished_at: Timestamp,
    pub executor_version: String,
    pub received_at_ns: i64,
    pub late: bool,
    pub results: Vec<TaskResult>,
}

/// Director-side state of one experiment. The record, not the experiment
/// value, carries the lifecycle status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: Experiment,
    pub status: ExperimentStatus,
    pub transitions: Vec<Transition>,
    pub nodes: BTreeMap<String, NodeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<DeploymentPlan>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
    #[serde(default)]
    pub reports: BTreeMap<String, StoredReport>,
    #[serde(default)]
    pub flags: BTreeMap<String, FlagRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline_ns: Option<i64>,
    #[serde(default)]
    pub cleaned_up: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IllegalTransition {
    pub from: ExperimentStatus,
    pub to: ExperimentStatus,
}

impl ExperimentRecord {
    pub fn new(experiment: Experiment) -> Self {
        let nodes = experiment
            .assignments
            .iter()
            .flat_map(|a| {
                a.nodes.iter().map(|n| {
                    (
                        n.node_id.clone(),
                        NodeRecord {
                            node: n.clone(),
                            pipeline_id: a.pipeline.pipeline_id.clone(),
                            deployment: DeployState::Pending,
                            execution: ExecState::Idle,
                            error: None,
                            exec_token: None,
                            launch: None,
                            late: false,
                            cleanup: None,
                        },
                    )
                })
            })
            .collect();
        Self {
            experiment,
            status: ExperimentStatus::Submitted,
            transitions: vec![Transition {
                from: None,
                to: ExperimentStatus::Submitted,
                at_ns: wall_now_ns(),
                note: None,
            }],
            nodes,
            plan: None,
            errors: Vec::new(),
            reports: BTreeMap::new(),
            flags: BTreeMap::new(),
            deadline_ns: None,
            cleaned_up: false,
        }
    }

    pub fn id(&self) -> &str {
        &self.experiment.experiment_id
    }

    /// Moves to `to` if the edge is legal and records it in the log.
    pub fn transition(&mut self, to: ExperimentStatus, note: Option<String>) -> Result<(), IllegalTransition> {
        if !self.status.can_transition_to(to) {
            return Err(IllegalTransition { from: self.status, to });
        }
        self.transitions.push(Transition { from: Some(self.status), to, at_ns: wall_now_ns(), note });
        self.status = to;
        Ok(())
    }

    pub fn status_history(&self) -> Vec<ExperimentStatus> {
        self.transitions.iter().map(|t| t.to).collect()
    }

    pub fn prepared(&self) -> impl Iterator<Item = &NodeRecord> {
        self.nodes.values().filter(|n| n.deployment == DeployState::Prepared)
    }

    /// Every prepared node is reported, unreachable or timed out.
    pub fn execution_complete(&self) -> bool {
        self.prepared().all(|n| n.execution.is_settled())
    }

    pub fn result_count(&self) -> usize {
        self.reports.values().map(|r| r.results.len()).sum()
    }

    pub fn store_report(&mut self, report: &PipelineReport, late: bool) {
        self.reports.insert(
            report.node_id.clone(),
            StoredReport {
                bundle_digest: report.bundle_digest.clone(),
                started_at: report.started_at,
                finished_at: report.finished_at,
                executor_version: report.executor_version.clone(),
                received_at_ns: wall_now_ns(),
                late,
                results: report.results.clone(),
            },
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeStatusView {
    pub node_id: String,
    pub pipeline_id: String,
    pub connector: String,
    pub deployment: DeployState,
    pub execution: ExecState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub late: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cleanup: Option<CleanupOutcome>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub success: usize,
    pub failure: usize,
    pub timeout: usize,
    pub skipped: usize,
}

/// Read-only snapshot returned by the status endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusView {
    pub experiment_id: String,
    pub status: ExperimentStatus,
    pub transitions: Vec<Transition>,
    pub nodes: Vec<NodeStatusView>,
    pub results: OutcomeCounts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
    #[serde(default)]
    pub cleaned_up: bool,
}

impl From<&ExperimentRecord> for StatusView {
    fn from(r: &ExperimentRecord) -> Self {
        let mut counts = OutcomeCounts::default();
        for res in r.reports.values().flat_map(|s| &s.results) {
            match res.outcome {
                Outcome::Success => counts.success += 1,
                Outcome::Failure => counts.failure += 1,
                Outcome::Timeout => counts.timeout += 1,
                Outcome::Skipped => counts.skipped += 1,
            }
        }
        Self {
            experiment_id: r.id().to_string(),
            status: r.status,
            transitions: r.transitions.clone(),
            nodes: r
                .nodes
                .values()
                .map(|n| NodeStatusView {
                    node_id: n.node.node_id.clone(),
                    pipeline_id: n.pipeline_id.clone(),
                    connector: n.node.connector_ref.clone(),
                    deployment: n.deployment,
                    execution: n.execution,
                    error: n.error.clone(),
                    late: n.late,
                    cleanup: n.cleanup.clone(),
                })
                .collect(),
            results: counts,
            errors: r.errors.clone(),
            cleaned_up: r.cleaned_up,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeResults {
    pub node_id: String,
    pub execution: ExecState,
    pub deployment: DeployState,
    #[serde(default)]
    pub late: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub results: Vec<TaskResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResults {
    pub pipeline_id: String,
    pub nodes: Vec<NodeResults>,
}

/// Results grouped by pipeline, then node, in task order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsView {
    pub experiment_id: String,
    pub status: ExperimentStatus,
    pub pipelines: Vec<PipelineResults>,
}

impl ResultsView {
    pub fn all_results(&self) -> impl Iterator<Item = &TaskResult> {
        self.pipelines.iter().flat_map(|p| &p.nodes).flat_map(|n| &n.results)
    }
}

impl From<&ExperimentRecord> for ResultsView {
    fn from(r: &ExperimentRecord) -> Self {
        let pipelines = r
            .experiment
            .assignments
            .iter()
            .map(|a| PipelineResults {
                pipeline_id: a.pipeline.pipeline_id.clone(),
                nodes: a
                    .nodes
                    .iter()
                    .map(|n| {
                        let rec = &r.nodes[&n.node_id];
                        NodeResults {
                            node_id: n.node_id.clone(),
                            execution: rec.execution,
                            deployment: rec.deployment,
                            late: rec.late,
                            error: rec.error.clone(),
                            results: r.reports.get(&n.node_id).map(|s| s.results.clone()).unwrap_or_default(),
                        }
                    })
                    .collect(),
            })
            .collect();
        Self { experiment_id: r.id().to_string(), status: r.status, pipelines }
    }
}
