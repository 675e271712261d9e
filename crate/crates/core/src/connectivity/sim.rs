//! Deterministic simulated infrastructure with fault injection.
//!
//! Every node has a virtual scratch area, an in-memory spool and an event
//! log. Executors run in-process as tokio tasks and reach the gateway through
//! a link that can drop reports or be detached entirely. Randomness comes
//! from one seeded ChaCha stream per node, so equal seeds and fault models
//! give equal event traces.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::task::JoinHandle;

use super::{
    CleanupOutcome, Connector, ConnectorError, ExecutorLaunch, LaunchHandle, NodeHealth, PrepareOutcome,
};
use crate::compiler::EnvironmentSpec;
use crate::executor::{
    BundleSource, ExecutionObserver, MemScratch, MemSpool, NodeAgent, PipelineBundle, PipelineReport, Scratch,
};
use crate::gateway::{FlagRecord, GatewayApi, GatewayError, IngestAck};
use crate::model::{NodeDescriptor, NodeKind, NodePool};
use crate::tasks::{ImplementationCatalog, SimShell};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultModel {
    /// Each node independently fails prepare with this probability, drawn
    /// once at construction.
    pub prepare_fail_prob: f64,
    /// Nodes that always fail prepare.
    pub prepare_fail_nodes: BTreeSet<String>,
    /// Nodes whose executor never starts, so they never report.
    pub silent_nodes: BTreeSet<String>,
    pub per_command_latency_ms: u64,
    pub latency_jitter_ms: u64,
    /// Probability that a single report delivery attempt is lost.
    pub report_drop_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimNodeGroup {
    pub count: usize,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub groups: Vec<SimNodeGroup>,
    #[serde(default)]
    pub faults: FaultModel,
}

impl SimConfig {
    pub fn new(name: impl Into<String>, seed: u64) -> Self {
        Self { name: name.into(), seed, groups: Vec::new(), faults: FaultModel::default() }
    }

    pub fn group(mut self, count: usize, attributes: &[(&str, &str)]) -> Self {
        self.groups.push(SimNodeGroup {
            count,
            attributes: attributes.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        });
        self
    }

    pub fn faults(mut self, faults: FaultModel) -> Self {
        self.faults = faults;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum SimEvent {
    Command { command: String, exit_code: i32 },
    StageFile { path: String },
    Prepare { prepared: bool },
    Launch { experiment_id: String, exec_token: String, silent: bool },
    LaunchRefused { experiment_id: String, exec_token: String },
    TaskStart { experiment_id: String, exec_token: String, stage: usize, index: usize, task: String },
    ReportAttempt { experiment_id: String, attempt: u32, delivered: bool },
    Stop { experiment_id: String, exec_token: String },
    Cleanup { ok: bool },
}

/// Token-free rendering, stable across runs with equal seeds.
impl fmt::Display for SimEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimEvent::Command { command, exit_code } => write!(f, "cmd[{exit_code}] {command}"),
            SimEvent::StageFile { path } => write!(f, "stage-file {path}"),
            SimEvent::Prepare { prepared } => write!(f, "prepare prepared={prepared}"),
            SimEvent::Launch { experiment_id, silent, .. } => write!(f, "launch {experiment_id} silent={silent}"),
            SimEvent::LaunchRefused { experiment_id, .. } => write!(f, "launch-refused {experiment_id}"),
            SimEvent::TaskStart { experiment_id, stage, index, task, .. } => {
                write!(f, "task {experiment_id} {stage}.{index} {task}")
            }
            SimEvent::ReportAttempt { experiment_id, attempt, delivered } => {
                write!(f, "report {experiment_id} #{attempt} delivered={delivered}")
            }
            SimEvent::Stop { experiment_id, .. } => write!(f, "stop {experiment_id}"),
            SimEvent::Cleanup { ok } => write!(f, "cleanup ok={ok}"),
        }
    }
}

struct SimNode {
    descriptor: NodeDescriptor,
    scratch: Arc<MemScratch>,
    spool: Arc<MemSpool>,
    rng: Mutex<ChaCha8Rng>,
    log: Mutex<Vec<SimEvent>>,
    tokens: Mutex<HashSet<String>>,
    running: Mutex<HashMap<String, JoinHandle<()>>>,
    reachable: RwLock<bool>,
    prepare_fails: bool,
    silent: bool,
}

impl SimNode {
    fn record(&self, e: SimEvent) {
        self.log.lock().unwrap().push(e);
    }
}

/// Shared state of a simulated infrastructure.
pub struct SimulatedInfrastructure {
    config: SimConfig,
    nodes: Vec<Arc<SimNode>>,
    index: HashMap<String, usize>,
    gateway: RwLock<Option<Arc<dyn GatewayApi>>>,
    catalog: Arc<ImplementationCatalog>,
    handle_seq: Mutex<u64>,
}

fn node_seed(seed: u64, idx: usize) -> u64 {
    seed ^ (idx as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl SimulatedInfrastructure {
    pub fn new(config: SimConfig) -> Self {
        let mut fault_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut nodes = Vec::new();
        let mut index = HashMap::new();
        for group in &config.groups {
            for _ in 0..group.count {
                let idx = nodes.len();
                let node_id = format!("{}-{idx:03}", config.name);
                let mut d = NodeDescriptor::new(&node_id, NodeKind::Simulated, &config.name);
                d.attributes = group.attributes.clone();
                let drawn: f64 = fault_rng.random();
                let prepare_fails =
                    drawn < config.faults.prepare_fail_prob || config.faults.prepare_fail_nodes.contains(&node_id);
                index.insert(node_id.clone(), idx);
                nodes.push(Arc::new(SimNode {
                    silent: config.faults.silent_nodes.contains(&node_id),
                    descriptor: d,
                    scratch: Arc::new(MemScratch::new()),
                    spool: Arc::new(MemSpool::new()),
                    rng: Mutex::new(ChaCha8Rng::seed_from_u64(node_seed(config.seed, idx))),
                    log: Mutex::new(Vec::new()),
                    tokens: Mutex::new(HashSet::new()),
                    running: Mutex::new(HashMap::new()),
                    reachable: RwLock::new(true),
                    prepare_fails,
                }));
            }
        }
        Self {
            config,
            nodes,
            index,
            gateway: RwLock::new(None),
            catalog: Arc::new(ImplementationCatalog::builtin()),
            handle_seq: Mutex::new(0),
        }
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    fn node(&self, node_id: &str) -> Result<&Arc<SimNode>, ConnectorError> {
        self.index
            .get(node_id)
            .map(|&i| &self.nodes[i])
            .ok_or_else(|| ConnectorError::UnknownNode(node_id.to_string()))
    }

    pub fn node_ids(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.descriptor.node_id.clone()).collect()
    }

    /// Nodes whose prepare will fail, fixed at construction.
    pub fn injected_prepare_failures(&self) -> BTreeSet<String> {
        self.nodes.iter().filter(|n| n.prepare_fails).map(|n| n.descriptor.node_id.clone()).collect()
    }

    pub fn silent_nodes(&self) -> BTreeSet<String> {
        self.nodes.iter().filter(|n| n.silent).map(|n| n.descriptor.node_id.clone()).collect()
    }

    pub fn events(&self, node_id: &str) -> Vec<SimEvent> {
        self.node(node_id).map(|n| n.log.lock().unwrap().clone()).unwrap_or_default()
    }

    /// Token-free event log of every node. Concurrent task starts within a
    /// stage are ordered by (stage, index) so the trace does not depend on
    /// scheduling.
    pub fn trace(&self) -> BTreeMap<String, Vec<String>> {
        self.nodes
            .iter()
            .map(|n| {
                let mut log = n.log.lock().unwrap().clone();
                let mut i = 0;
                while i < log.len() {
                    let mut j = i;
                    while j < log.len() && matches!(log[j], SimEvent::TaskStart { .. }) {
                        j += 1;
                    }
                    if j > i {
                        log[i..j].sort_by_key(|e| match e {
                            SimEvent::TaskStart { stage, index, .. } => (*stage, *index),
                            _ => unreachable!(),
                        });
                        i = j;
                    } else {
                        i += 1;
                    }
                }
                (n.descriptor.node_id.clone(), log.iter().map(ToString::to_string).collect())
            })
            .collect()
    }

    /// Number of task starts per (node, experiment, task) under each token.
    pub fn task_executions(&self, experiment_id: &str) -> BTreeMap<(String, String), Vec<String>> {
        let mut out: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
        for n in &self.nodes {
            for e in n.log.lock().unwrap().iter() {
                if let SimEvent::TaskStart { experiment_id: exp, exec_token, task, .. } = e {
                    if exp == experiment_id {
                        out.entry((n.descriptor.node_id.clone(), task.clone())).or_default().push(exec_token.clone());
                    }
                }
            }
        }
        out
    }

    pub fn scratch(&self, node_id: &str) -> Option<Arc<MemScratch>> {
        self.node(node_id).ok().map(|n| Arc::clone(&n.scratch))
    }

    pub fn spool(&self, node_id: &str) -> Option<Arc<MemSpool>> {
        self.node(node_id).ok().map(|n| Arc::clone(&n.spool))
    }

    pub fn set_reachable(&self, node_id: &str, reachable: bool) {
        if let Ok(n) = self.node(node_id) {
            *n.reachable.write().unwrap() = reachable;
        }
    }

    /// Executors still running on any node.
    pub fn running_executors(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| n.running.lock().unwrap().values().filter(|h| !h.is_finished()).count())
            .sum()
    }

    fn current_gateway(&self) -> Option<Arc<dyn GatewayApi>> {
        self.gateway.read().unwrap().clone()
    }

    async fn latency(&self, node: &SimNode) {
        let f = &self.config.faults;
        if f.per_command_latency_ms == 0 && f.latency_jitter_ms == 0 {
            return;
        }
        let jitter = if f.latency_jitter_ms > 0 { node.rng.lock().unwrap().random_range(0..=f.latency_jitter_ms) } else { 0 };
        tokio::time::sleep(Duration::from_millis(f.per_command_latency_ms + jitter)).await;
    }

    async fn run_command(&self, node: &SimNode, command: &str) -> crate::tasks::SimCommandOutcome {
        self.latency(node).await;
        let out = SimShell::new(node.scratch.as_ref()).run(command).await;
        node.record(SimEvent::Command { command: command.to_string(), exit_code: out.exit_code });
        out
    }
}

/// The executor's view of the gateway from inside a simulated node.
struct SimLink {
    infra: Arc<SimulatedInfrastructure>,
    node: Arc<SimNode>,
}

impl SimLink {
    fn gateway(&self) -> Result<Arc<dyn GatewayApi>, GatewayError> {
        if !*self.node.reachable.read().unwrap() {
            return Err(GatewayError::transport("node is partitioned"));
        }
        self.infra.current_gateway().ok_or_else(|| GatewayError::transport("gateway unreachable"))
    }
}

#[async_trait]
impl GatewayApi for SimLink {
    async fn fetch_bundle(&self, experiment_id: &str, node_id: &str) -> Result<PipelineBundle, GatewayError> {
        self.gateway()?.fetch_bundle(experiment_id, node_id).await
    }

    async fn ingest_report(&self, report: &PipelineReport) -> Result<IngestAck, GatewayError> {
        let p = self.infra.config.faults.report_drop_prob;
        if p > 0.0 {
            let drawn: f64 = self.node.rng.lock().unwrap().random();
            if drawn < p {
                return Err(GatewayError::transport("report lost in transit"));
            }
        }
        self.gateway()?.ingest_report(report).await
    }

    async fn set_flag(&self, experiment_id: &str, key: &str, node_id: &str) -> Result<FlagRecord, GatewayError> {
        self.gateway()?.set_flag(experiment_id, key, node_id).await
    }

    async fn get_flag(&self, experiment_id: &str, key: &str) -> Result<Option<FlagRecord>, GatewayError> {
        self.gateway()?.get_flag(experiment_id, key).await
    }

    async fn put_artifact(
        &self,
        experiment_id: &str,
        node_id: &str,
        name: &str,
        bytes: Vec<u8>,
    ) -> Result<String, GatewayError> {
        self.gateway()?.put_artifact(experiment_id, node_id, name, bytes).await
    }
}

struct SimObserver {
    node: Arc<SimNode>,
    exec_token: String,
}

impl ExecutionObserver for SimObserver {
    fn task_started(&self, experiment_id: &str, stage: usize, index: usize, task_name: &str) {
        self.node.record(SimEvent::TaskStart {
            experiment_id: experiment_id.to_string(),
            exec_token: self.exec_token.clone(),
            stage,
            index,
            task: task_name.to_string(),
        });
    }

    fn report_attempt(&self, experiment_id: &str, attempt: u32, delivered: bool) {
        self.node.record(SimEvent::ReportAttempt { experiment_id: experiment_id.to_string(), attempt, delivered });
    }
}

/// [`Connector`] over a [`SimulatedInfrastructure`].
#[derive(Clone)]
pub struct SimulatedConnector {
    infra: Arc<SimulatedInfrastructure>,
}

impl SimulatedConnector {
    pub fn new(config: SimConfig) -> Self {
        Self { infra: Arc::new(SimulatedInfrastructure::new(config)) }
    }

    pub fn infrastructure(&self) -> &Arc<SimulatedInfrastructure> {
        &self.infra
    }
}

#[async_trait]
impl Connector for SimulatedConnector {
    fn name(&self) -> &str {
        self.infra.name()
    }

    async fn list_nodes(&self) -> Result<NodePool, ConnectorError> {
        NodePool::new(self.infra.nodes.iter().map(|n| n.descriptor.clone()).collect())
            .map_err(|e| ConnectorError::Config(e.to_string()))
    }

    async fn prepare(&self, node: &NodeDescriptor, env: &EnvironmentSpec) -> PrepareOutcome {
        let Ok(n) = self.infra.node(&node.node_id) else {
            return PrepareOutcome::PrepareFailed { command: String::new(), output: format!("unknown node `{}`", node.node_id) };
        };
        let outcome = self.prepare_node(n, env).await;
        n.record(SimEvent::Prepare { prepared: outcome.is_prepared() });
        outcome
    }

    async fn launch_executor(
        &self,
        node: &NodeDescriptor,
        launch: &ExecutorLaunch,
    ) -> Result<LaunchHandle, ConnectorError> {
        let n = Arc::clone(self.infra.node(&node.node_id)?);
        if !*n.reachable.read().unwrap() {
            return Err(ConnectorError::NodeUnreachable { node: node.node_id.clone(), reason: "partitioned".into() });
        }
        self.infra.latency(&n).await;
        if !n.tokens.lock().unwrap().insert(launch.exec_token.clone()) {
            n.record(SimEvent::LaunchRefused {
                experiment_id: launch.experiment_id.clone(),
                exec_token: launch.exec_token.clone(),
            });
            return Err(ConnectorError::LaunchFailed {
                node: node.node_id.clone(),
                reason: "execution token already used".into(),
            });
        }
        n.record(SimEvent::Launch {
            experiment_id: launch.experiment_id.clone(),
            exec_token: launch.exec_token.clone(),
            silent: n.silent,
        });
        let handle_id = {
            let mut seq = self.infra.handle_seq.lock().unwrap();
            *seq += 1;
            format!("sim-{}", *seq)
        };
        if !n.silent {
            let source = match &launch.bundle_ref {
                Some(r) => BundleSource::parse(r).map_err(|e| ConnectorError::LaunchFailed {
                    node: node.node_id.clone(),
                    reason: e.to_string(),
                })?,
                None => BundleSource::Gateway,
            };
            let agent = NodeAgent {
                experiment_id: launch.experiment_id.clone(),
                node_id: node.node_id.clone(),
                exec_token: launch.exec_token.clone(),
                gateway: Arc::new(SimLink { infra: Arc::clone(&self.infra), node: Arc::clone(&n) }),
                scratch: Arc::clone(&n.scratch) as Arc<dyn Scratch>,
                spool: Arc::clone(&n.spool) as Arc<dyn crate::executor::Spool>,
                catalog: Arc::clone(&self.infra.catalog),
                observer: Some(Arc::new(SimObserver { node: Arc::clone(&n), exec_token: launch.exec_token.clone() })),
                source,
            };
            let node_id = node.node_id.clone();
            let h = tokio::spawn(async move {
                if let Err(e) = agent.run().await {
                    tracing::warn!(node = %node_id, error = %e, "simulated executor failed to start");
                }
            });
            n.running.lock().unwrap().insert(handle_id.clone(), h);
        }
        Ok(LaunchHandle {
            connector: self.infra.name().to_string(),
            node_id: node.node_id.clone(),
            experiment_id: launch.experiment_id.clone(),
            exec_token: launch.exec_token.clone(),
            handle_id,
        })
    }

    async fn stop_executor(&self, handle: &LaunchHandle) -> Result<(), ConnectorError> {
        let n = self.infra.node(&handle.node_id)?;
        if let Some(h) = n.running.lock().unwrap().remove(&handle.handle_id) {
            h.abort();
        }
        n.record(SimEvent::Stop { experiment_id: handle.experiment_id.clone(), exec_token: handle.exec_token.clone() });
        Ok(())
    }

    async fn health(&self, node: &NodeDescriptor) -> NodeHealth {
        match self.infra.node(&node.node_id) {
            Ok(n) if *n.reachable.read().unwrap() => NodeHealth::Reachable,
            _ => NodeHealth::Unreachable,
        }
    }

    async fn cleanup(&self, node: &NodeDescriptor, commands: &[String]) -> CleanupOutcome {
        let Ok(n) = self.infra.node(&node.node_id) else {
            return CleanupOutcome { ok: false, failed_command: None, output: format!("unknown node `{}`", node.node_id) };
        };
        let mut outcome = CleanupOutcome { ok: true, failed_command: None, output: String::new() };
        for c in commands {
            let out = self.infra.run_command(n, c).await;
            if !out.success() && outcome.ok {
                outcome = CleanupOutcome { ok: false, failed_command: Some(c.clone()), output: out.output };
            }
        }
        n.record(SimEvent::Cleanup { ok: outcome.ok });
        outcome
    }

    fn attach_gateway(&self, gateway: Arc<dyn GatewayApi>) {
        *self.infra.gateway.write().unwrap() = Some(gateway);
    }

    fn detach_gateway(&self) {
        *self.infra.gateway.write().unwrap() = None;
    }
}

impl SimulatedConnector {
    async fn prepare_node(&self, n: &SimNode, env: &EnvironmentSpec) -> PrepareOutcome {
        for c in &env.setup_commands {
            let out = self.infra.run_command(n, c).await;
            if !out.success() {
                return PrepareOutcome::PrepareFailed { command: c.clone(), output: out.output };
            }
        }
        for f in &env.staged_files {
            if let Err(e) = n.scratch.write(&f.path, f.content.as_bytes()) {
                return PrepareOutcome::PrepareFailed { command: format!("stage {}", f.path), output: e.to_string() };
            }
            n.record(SimEvent::StageFile { path: f.path.clone() });
        }
        if n.prepare_fails {
            let command = env.verify_commands.first().cloned().unwrap_or_else(|| "verify".to_string());
            n.record(SimEvent::Command { command: command.clone(), exit_code: 1 });
            return PrepareOutcome::PrepareFailed { command, output: "injected prepare failure".into() };
        }
        for c in &env.verify_commands {
            let out = self.infra.run_command(n, c).await;
            if !out.success() {
                return PrepareOutcome::PrepareFailed { command: c.clone(), output: out.output };
            }
        }
        PrepareOutcome::Prepared
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::{EnvironmentBody, EnvironmentKey};

    fn env(setup: &[&str], verify: &[&str]) -> EnvironmentSpec {
        EnvironmentSpec::new(
            EnvironmentKey { pipeline_digest: "d".into(), node_kind: NodeKind::Simulated },
            EnvironmentBody {
                setup_commands: setup.iter().map(|s| s.to_string()).collect(),
                staged_files: Vec::new(),
                verify_commands: verify.iter().map(|s| s.to_string()).collect(),
            },
        )
    }

    #[tokio::test]
    async fn lists_grouped_nodes_in_order() {
        let c = SimulatedConnector::new(
            SimConfig::new("sim", 1).group(2, &[("location", "campus")]).group(1, &[("location", "azure")]),
        );
        let pool = c.list_nodes().await.unwrap();
        let ids: Vec<_> = pool.nodes().iter().map(|n| n.node_id.as_str()).collect();
        assert_eq!(ids, ["sim-000", "sim-001", "sim-002"]);
        assert_eq!(pool.nodes()[2].attribute("location"), Some("azure"));
        assert!(pool.nodes().iter().all(|n| n.kind == NodeKind::Simulated));
    }

    #[tokio::test]
    async fn prepare_runs_vocabulary() {
        let c = SimulatedConnector::new(SimConfig::new("sim", 1).group(1, &[]));
        let node = c.list_nodes().await.unwrap().nodes()[0].clone();
        assert!(c.prepare(&node, &env(&[], &[])).await.is_prepared());
        match c.prepare(&node, &env(&["apt-get install x"], &["false"])).await {
            PrepareOutcome::PrepareFailed { command, .. } => assert_eq!(command, "false"),
            other => panic!("{other:?}"),
        }
    }

    #[tokio::test]
    async fn certain_failure_probability() {
        let c = SimulatedConnector::new(SimConfig::new("sim", 1).group(3, &[]).faults(FaultModel {
            prepare_fail_prob: 1.0,
            ..FaultModel::default()
        }));
        assert_eq!(c.infrastructure().injected_prepare_failures().len(), 3);
        let node = c.list_nodes().await.unwrap().nodes()[0].clone();
        assert!(!c.prepare(&node, &env(&[], &[])).await.is_prepared());
    }

    #[test]
    fn failure_draws_depend_only_on_seed() {
        let mk = |seed| {
            SimulatedInfrastructure::new(SimConfig::new("s", seed).group(50, &[]).faults(FaultModel {
                prepare_fail_prob: 0.3,
                ..FaultModel::default()
            }))
            .injected_prepare_failures()
        };
        assert_eq!(mk(9), mk(9));
        assert_ne!(mk(9), mk(10));
    }
}
