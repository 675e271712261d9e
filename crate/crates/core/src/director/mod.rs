//! The mediation service: experiment lifecycle, persistence and the
//! experimenter-facing API.
//!
//! All mutation of an experiment record goes through [`Core::update`], which
//! holds a per-experiment lock for the load-modify-store cycle. Readers get
//! immutable snapshots. Background work (compile, prepare, launch, monitor)
//! runs on spawned tasks; API calls return as soon as the status change is
//! persisted.

mod http;
mod record;
mod store;

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::task::JoinHandle;

use crate::clock::wall_now_ns;
use crate::compiler::compile_with;
use crate::connectivity::{ConnectorRegistry, ExecutorLaunch, NodeHealth, PrepareOutcome};
use crate::executor::ExecutorSettings;
use crate::gateway::{Gateway, GatewayApi};
use crate::manifest::ExperimentManifest;
use crate::model::{
    validate_experiment, DeployStrictness, Experiment, ExperimentStatus, NodeDescriptor, NodePool, ValidationError,
};
use crate::tasks::TaskRegistry;

pub use http::router;
pub use record::{
    DeployState, ExecState, ExperimentRecord, NodeRecord, NodeResults, NodeStatusView, OutcomeCounts,
    PipelineResults, ResultsView, StatusView, StoredReport, Transition,
};
pub use store::{ExperimentStore, FileStore, MemoryStore, StoreError};

#[derive(Debug, Clone)]
pub struct DirectorConfig {
    /// Endpoint remote executors use to reach the gateway.
    pub gateway_endpoint: String,
    pub executor: ExecutorSettings,
    pub monitor_interval: Duration,
    pub health_interval: Duration,
    /// Stop all background progress right after this status is persisted.
    /// Used to simulate a director crash at a chosen lifecycle point.
    pub halt_after: Option<ExperimentStatus>,
}

impl Default for DirectorConfig {
    fn default() -> Self {
        Self {
            gateway_endpoint: "http://127.0.0.1:7878".to_string(),
            executor: ExecutorSettings::default(),
            monitor_interval: Duration::from_millis(200),
            health_interval: Duration::from_secs(5),
            halt_after: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Invalid,
    Conflict,
    NotFound,
    Internal,
}

#[derive(Debug, Error, Clone)]
pub enum DirectorError {
    #[error("experiment failed validation: {}", join_errors(.0))]
    Validation(Vec<ValidationError>),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("experiment `{0}` already exists")]
    DuplicateExperiment(String),
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("experiment is {status}, not READY")]
    NotReady { status: ExperimentStatus },
    #[error("cannot {op} while experiment is {status}")]
    WrongPhase { op: &'static str, status: ExperimentStatus },
    #[error("experiment already {status}")]
    AlreadyTerminal { status: ExperimentStatus },
    #[error("connector: {0}")]
    Connector(String),
    #[error("store: {0}")]
    Store(String),
}

fn join_errors(errs: &[ValidationError]) -> String {
    errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

impl DirectorError {
    pub fn class(&self) -> ErrorClass {
        match self {
            DirectorError::Validation(_) | DirectorError::Manifest(_) => ErrorClass::Invalid,
            DirectorError::DuplicateExperiment(_)
            | DirectorError::NotReady { .. }
            | DirectorError::WrongPhase { .. }
            | DirectorError::AlreadyTerminal { .. } => ErrorClass::Conflict,
            DirectorError::UnknownExperiment(_) => ErrorClass::NotFound,
            DirectorError::Connector(_) | DirectorError::Store(_) => ErrorClass::Internal,
        }
    }
}

impl From<StoreError> for DirectorError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Exists(id) => DirectorError::DuplicateExperiment(id),
            other => DirectorError::Store(other.to_string()),
        }
    }
}

pub(crate) struct Core {
    pub(crate) config: DirectorConfig,
    pub(crate) store: Arc<dyn ExperimentStore>,
    pub(crate) connectors: ConnectorRegistry,
    pub(crate) registry: TaskRegistry,
    cache: RwLock<HashMap<String, Arc<ExperimentRecord>>>,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
    stopped: AtomicBool,
}

impl Core {
    pub(crate) fn snapshot(&self, id: &str) -> Result<Arc<ExperimentRecord>, DirectorError> {
        self.cache
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| DirectorError::UnknownExperiment(id.to_string()))
    }

    fn lock_for(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        Arc::clone(self.locks.lock().unwrap().entry(id.to_string()).or_default())
    }

    fn is_stopped(&self) -> bool {
        self.stopped.load(Ordering::SeqCst)
    }

    /// Single-writer load-modify-store. The closure's error aborts without
    /// persisting anything.
    pub(crate) async fn update<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut ExperimentRecord) -> Result<T, DirectorError>,
    ) -> Result<T, DirectorError> {
        let lock = self.lock_for(id);
        let _guard = lock.lock().await;
        let mut rec = (*self.snapshot(id)?).clone();
        let out = f(&mut rec)?;
        if self.is_stopped() {
            return Err(DirectorError::Store("director is stopped".into()));
        }
        self.store.save(&rec)?;
        self.cache.write().unwrap().insert(id.to_string(), Arc::new(rec));
        Ok(out)
    }

    fn halts_at(&self, status: ExperimentStatus) -> bool {
        self.config.halt_after == Some(status)
    }

    fn spawn(self: &Arc<Self>, fut: impl std::future::Future<Output = ()> + Send + 'static) {
        if self.is_stopped() {
            return;
        }
        let mut workers = self.workers.lock().unwrap();
        workers.retain(|h| !h.is_finished());
        workers.push(tokio::spawn(fut));
    }

    async fn compile_phase(self: Arc<Self>, id: String) {
        let Ok(snap) = self.snapshot(&id) else { return };
        if snap.status != ExperimentStatus::Compiling {
            return;
        }
        let compiled = compile_with(&snap.experiment, &self.registry, &self.config.executor);
        let res = self
            .update(&id, |r| {
                if r.status != ExperimentStatus::Compiling {
                    return Ok(false);
                }
                match &compiled {
                    Ok(plan) => {
                        r.plan = Some(plan.clone());
                        r.transition(ExperimentStatus::Deploying, None).map_err(illegal)?;
                        Ok(true)
                    }
                    Err(e) => {
                        r.errors.push(e.to_string());
                        r.transition(ExperimentStatus::Failed, Some(format!("compile failed: {e}"))).map_err(illegal)?;
                        Ok(false)
                    }
                }
            })
            .await;
        match res {
            Ok(true) if !self.halts_at(ExperimentStatus::Deploying) => self.prepare_phase(id).await,
            Ok(_) => {}
            Err(e) => tracing::warn!(experiment = %id, error = %e, "compile phase"),
        }
    }

    async fn prepare_phase(self: Arc<Self>, id: String) {
        let Ok(snap) = self.snapshot(&id) else { return };
        if snap.status != ExperimentStatus::Deploying {
            return;
        }
        let Some(plan) = snap.plan.clone() else { return };
        let pending: Vec<NodeDescriptor> = snap
            .nodes
            .values()
            .filter(|n| n.deployment == DeployState::Pending)
            .map(|n| n.node.clone())
            .collect();

        let jobs = pending.into_iter().map(|node| {
            let core = Arc::clone(&self);
            let plan = &plan;
            let id = id.clone();
            async move {
                let outcome = match (core.connectors.get(&node.connector_ref), plan.environment_for_node(&node.node_id))
                {
                    (None, _) => PrepareOutcome::PrepareFailed {
                        command: String::new(),
                        output: format!("unknown connector `{}`", node.connector_ref),
                    },
                    (_, None) => PrepareOutcome::PrepareFailed {
                        command: String::new(),
                        output: "no environment in deployment plan".into(),
                    },
                    (Some(c), Some(env)) => c.prepare(&node, env).await,
                };
                let _ = core
                    .update(&id, |r| {
                        if r.status != ExperimentStatus::Deploying {
                            return Ok(());
                        }
                        if let Some(n) = r.nodes.get_mut(&node.node_id) {
                            match &outcome {
                                PrepareOutcome::Prepared => {
                                    n.deployment = DeployState::Prepared;
                                    n.error = None;
                                }
                                PrepareOutcome::PrepareFailed { command, output } => {
                                    n.deployment = DeployState::PrepareFailed;
                                    n.error = Some(if command.is_empty() {
                                        output.clone()
                                    } else {
                                        format!("`{command}` failed: {output}")
                                    });
                                }
                            }
                        }
                        Ok(())
                    })
                    .await;
            }
        });
        join_all(jobs).await;
        if self.is_stopped() {
            return;
        }

        let _ = self
            .update(&id, |r| {
                if r.status != ExperimentStatus::Deploying {
                    return Ok(());
                }
                let total = r.nodes.len();
                let prepared = r.prepared().count();
                let ok = match r.experiment.policies.deploy_strictness {
                    DeployStrictness::AllOrNothing => prepared == total,
                    DeployStrictness::BestEffort => prepared >= 1,
                };
                let note = format!("{prepared}/{total} nodes prepared");
                let to = if ok { ExperimentStatus::Ready } else { ExperimentStatus::Failed };
                if !ok {
                    let failed: Vec<&str> = r
                        .nodes
                        .values()
                        .filter(|n| n.deployment != DeployState::Prepared)
                        .map(|n| n.node.node_id.as_str())
                        .collect();
                    let msg = format!("deployment failed: {note}; not prepared: {}", failed.join(", "));
                    r.errors.push(msg);
                }
                r.transition(to, Some(note)).map_err(illegal)
            })
            .await;
    }

    async fn launch_phase(self: Arc<Self>, id: String) {
        let Ok(snap) = self.snapshot(&id) else { return };
        if snap.status != ExperimentStatus::Running {
            return;
        }
        let idle: Vec<(NodeDescriptor, String)> = snap
            .nodes
            .values()
            .filter(|n| n.deployment == DeployState::Prepared && n.execution == ExecState::Idle)
            .filter_map(|n| n.exec_token.clone().map(|t| (n.node.clone(), t)))
            .collect();

        let jobs = idle.into_iter().map(|(node, token)| {
            let core = Arc::clone(&self);
            let id = id.clone();
            async move {
                // The attempt is persisted before the launch so a restarted
                // director never launches this node again.
                let go = core
                    .update(&id, |r| {
                        if r.status != ExperimentStatus::Running {
                            return Ok(false);
                        }
                        match r.nodes.get_mut(&node.node_id) {
                            Some(n) if n.execution == ExecState::Idle => {
                                n.execution = ExecState::Running;
                                Ok(true)
                            }
                            _ => Ok(false),
                        }
                    })
                    .await
                    .unwrap_or(false);
                if !go {
                    return;
                }
                let launch = ExecutorLaunch {
                    gateway_endpoint: core.config.gateway_endpoint.clone(),
                    experiment_id: id.clone(),
                    node_id: node.node_id.clone(),
                    exec_token: token,
                    bundle_ref: None,
                };
                let res = match core.connectors.get(&node.connector_ref) {
                    Some(c) => c.launch_executor(&node, &launch).await.map_err(|e| e.to_string()),
                    None => Err(format!("unknown connector `{}`", node.connector_ref)),
                };
                let _ = core
                    .update(&id, |r| {
                        if let Some(n) = r.nodes.get_mut(&node.node_id) {
                            match res {
                                Ok(h) => n.launch = Some(h),
                                Err(e) => {
                                    if n.execution == ExecState::Running {
                                        n.execution = ExecState::Unreachable;
                                    }
                                    n.error = Some(e);
                                }
                            }
                        }
                        finish_check(r);
                        Ok(())
                    })
                    .await;
            }
        });
        join_all(jobs).await;
    }

    async fn monitor(self: Arc<Self>, id: String) {
        let mut last_health = tokio::time::Instant::now();
        loop {
            tokio::time::sleep(self.config.monitor_interval).await;
            if self.is_stopped() {
                return;
            }
            let Ok(snap) = self.snapshot(&id) else { return };
            if snap.status != ExperimentStatus::Running {
                return;
            }
            if snap.deadline_ns.is_some_and(|d| wall_now_ns() >= d) {
                let _ = self
                    .update(&id, |r| {
                        for n in r.nodes.values_mut() {
                            if n.deployment == DeployState::Prepared && !n.execution.is_settled() {
                                n.execution = ExecState::TimedOut;
                                n.error = Some("no report before the experiment deadline".into());
                            }
                        }
                        finish_check(r);
                        Ok(())
                    })
                    .await;
                return;
            }
            if last_health.elapsed() >= self.config.health_interval {
                last_health = tokio::time::Instant::now();
                let running: Vec<NodeDescriptor> = snap
                    .nodes
                    .values()
                    .filter(|n| n.execution == ExecState::Running)
                    .map(|n| n.node.clone())
                    .collect();
                let checks = running.iter().map(|node| async {
                    let h = match self.connectors.get(&node.connector_ref) {
                        Some(c) => c.health(node).await,
                        None => NodeHealth::Unreachable,
                    };
                    (node.node_id.clone(), h)
                });
                let down: Vec<String> = join_all(checks)
                    .await
                    .into_iter()
                    .filter(|(_, h)| *h == NodeHealth::Unreachable)
                    .map(|(n, _)| n)
                    .collect();
                if !down.is_empty() {
                    let _ = self
                        .update(&id, |r| {
                            for node_id in &down {
                                if let Some(n) = r.nodes.get_mut(node_id) {
                                    if n.execution == ExecState::Running {
                                        n.execution = ExecState::Unreachable;
                                        n.error = Some("health check failed".into());
                                    }
                                }
                            }
                            finish_check(r);
                            Ok(())
                        })
                        .await;
                }
            }
        }
    }
}

fn illegal(e: record::IllegalTransition) -> DirectorError {
    DirectorError::WrongPhase { op: "transition", status: e.from }
}

/// RUNNING -> FINISHED once every prepared node has settled; FAILED when no
/// node could be reached at all.
pub(crate) fn finish_check(r: &mut ExperimentRecord) {
    if r.status != ExperimentStatus::Running || !r.execution_complete() {
        return;
    }
    let prepared: Vec<_> = r.prepared().map(|n| n.execution).collect();
    if !prepared.is_empty() && prepared.iter().all(|s| *s == ExecState::Unreachable) {
        r.errors.push("every node was unreachable".into());
        let _ = r.transition(ExperimentStatus::Failed, Some("no node reachable".into()));
    } else {
        let _ = r.transition(ExperimentStatus::Finished, None);
    }
}

/// Handle to a running director. Cloning shares the same instance.
#[derive(Clone)]
pub struct Director {
    core: Arc<Core>,
    gateway: Arc<Gateway>,
    recovered: Arc<Vec<(String, ExperimentStatus)>>,
}

impl Director {
    /// Loads every persisted record, attaches the gateway to in-process
    /// connectors and resumes interrupted work. Nodes already launched are
    /// only monitored, never launched again.
    pub async fn start(
        config: DirectorConfig,
        store: Arc<dyn ExperimentStore>,
        connectors: ConnectorRegistry,
        registry: TaskRegistry,
    ) -> Result<Self, DirectorError> {
        let records = store.load_all()?;
        let recovered: Vec<_> = records.iter().map(|r| (r.id().to_string(), r.status)).collect();
        let cache = records.into_iter().map(|r| (r.id().to_string(), Arc::new(r))).collect();
        let core = Arc::new(Core {
            config,
            store,
            connectors,
            registry,
            cache: RwLock::new(cache),
            locks: Mutex::new(HashMap::new()),
            workers: Mutex::new(Vec::new()),
            stopped: AtomicBool::new(false),
        });
        let gateway = Arc::new(Gateway::new(Arc::clone(&core)));
        for c in core.connectors.iter() {
            c.attach_gateway(Arc::clone(&gateway) as Arc<dyn GatewayApi>);
        }

        for (id, status) in &recovered {
            let id = id.clone();
            match status {
                ExperimentStatus::Compiling => core.spawn(Arc::clone(&core).compile_phase(id)),
                ExperimentStatus::Deploying => core.spawn(Arc::clone(&core).prepare_phase(id)),
                ExperimentStatus::Running => {
                    core.spawn(Arc::clone(&core).launch_phase(id.clone()));
                    core.spawn(Arc::clone(&core).monitor(id));
                }
                _ => {}
            }
        }
        Ok(Self { core, gateway, recovered: Arc::new(recovered) })
    }

    /// Experiments found in the store at start, with their persisted status.
    pub fn recovered(&self) -> &[(String, ExperimentStatus)] {
        &self.recovered
    }

    pub fn gateway(&self) -> Arc<Gateway> {
        Arc::clone(&self.gateway)
    }

    pub fn config(&self) -> &DirectorConfig {
        &self.core.config
    }

    pub fn registry(&self) -> &TaskRegistry {
        &self.core.registry
    }

    pub fn connectors(&self) -> &ConnectorRegistry {
        &self.core.connectors
    }

    pub async fn submit(&self, experiment: Experiment) -> Result<String, DirectorError> {
        validate_experiment(&experiment, &self.core.registry).map_err(DirectorError::Validation)?;
        let id = experiment.experiment_id.clone();
        if self.core.is_stopped() {
            return Err(DirectorError::Store("director is stopped".into()));
        }
        let lock = self.core.lock_for(&id);
        let _g = lock.lock().await;
        let rec = ExperimentRecord::new(experiment);
        self.core.store.create(&rec)?;
        self.core.cache.write().unwrap().insert(id.clone(), Arc::new(rec));
        Ok(id)
    }

    /// Resolves the manifest's selectors against the current node pool and
    /// submits the resulting experiment.
    pub async fn submit_manifest(&self, text: &str) -> Result<String, DirectorError> {
        let manifest = ExperimentManifest::parse(text).map_err(|e| DirectorError::Manifest(e.to_string()))?;
        let pool = self.core.connectors.pool().await.map_err(|e| DirectorError::Connector(e.to_string()))?;
        let exp = manifest.resolve(&pool).map_err(|e| DirectorError::Manifest(e.to_string()))?;
        self.submit(exp).await
    }

    pub async fn deploy(&self, id: &str) -> Result<ExperimentStatus, DirectorError> {
        let started = self
            .core
            .update(id, |r| match r.status {
                ExperimentStatus::Submitted => {
                    r.transition(ExperimentStatus::Compiling, None).map_err(illegal)?;
                    Ok(true)
                }
                ExperimentStatus::Compiling | ExperimentStatus::Deploying | ExperimentStatus::Ready => Ok(false),
                status => Err(DirectorError::WrongPhase { op: "deploy", status }),
            })
            .await?;
        if started && !self.core.halts_at(ExperimentStatus::Compiling) {
            self.core.spawn(Arc::clone(&self.core).compile_phase(id.to_string()));
        }
        Ok(self.core.snapshot(id)?.status)
    }

    pub async fn execute(&self, id: &str) -> Result<ExperimentStatus, DirectorError> {
        let started = self
            .core
            .update(id, |r| match r.status {
                ExperimentStatus::Ready => {
                    for n in r.nodes.values_mut() {
                        if n.deployment == DeployState::Prepared {
                            n.exec_token = Some(uuid::Uuid::new_v4().to_string());
                        }
                    }
                    let timeout_ns = (r.experiment.policies.experiment_timeout_s * 1e9) as i64;
                    r.deadline_ns = Some(wall_now_ns().saturating_add(timeout_ns));
                    r.transition(ExperimentStatus::Running, None).map_err(illegal)?;
                    Ok(true)
                }
                ExperimentStatus::Running => Ok(false),
                status => Err(DirectorError::NotReady { status }),
            })
            .await?;
        if started && !self.core.halts_at(ExperimentStatus::Running) {
            self.core.spawn(Arc::clone(&self.core).launch_phase(id.to_string()));
            self.core.spawn(Arc::clone(&self.core).monitor(id.to_string()));
        }
        Ok(ExperimentStatus::Running)
    }

    pub fn status(&self, id: &str) -> Result<StatusView, DirectorError> {
        Ok(StatusView::from(self.core.snapshot(id)?.as_ref()))
    }

    pub fn record(&self, id: &str) -> Result<Arc<ExperimentRecord>, DirectorError> {
        self.core.snapshot(id)
    }

    pub fn results(&self, id: &str) -> Result<ResultsView, DirectorError> {
        Ok(ResultsView::from(self.core.snapshot(id)?.as_ref()))
    }

    pub fn experiment_ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.core.cache.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub async fn cancel(&self, id: &str) -> Result<ExperimentStatus, DirectorError> {
        let handles = self
            .core
            .update(id, |r| {
                if r.status.is_terminal() {
                    return Err(DirectorError::AlreadyTerminal { status: r.status });
                }
                r.transition(ExperimentStatus::Cancelled, None).map_err(illegal)?;
                Ok(r.nodes
                    .values()
                    .filter(|n| n.execution == ExecState::Running)
                    .filter_map(|n| n.launch.clone().map(|h| (n.node.connector_ref.clone(), h)))
                    .collect::<Vec<_>>())
            })
            .await?;
        let stops = handles.iter().map(|(conn, h)| async move {
            if let Some(c) = self.core.connectors.get(conn) {
                if let Err(e) = c.stop_executor(h).await {
                    tracing::warn!(node = %h.node_id, error = %e, "stop executor");
                }
            }
        });
        join_all(stops).await;
        Ok(ExperimentStatus::Cancelled)
    }

    pub async fn cleanup(&self, id: &str) -> Result<StatusView, DirectorError> {
        let snap = self.core.snapshot(id)?;
        if !snap.status.is_terminal() {
            return Err(DirectorError::WrongPhase { op: "cleanup", status: snap.status });
        }
        let jobs = snap.prepared().map(|n| {
            let node = n.node.clone();
            let commands = snap
                .plan
                .as_ref()
                .and_then(|p| p.cleanup_commands.get(&node.kind).cloned())
                .unwrap_or_default();
            async move {
                let outcome = match self.core.connectors.get(&node.connector_ref) {
                    Some(c) => c.cleanup(&node, &commands).await,
                    None => crate::connectivity::CleanupOutcome {
                        ok: false,
                        failed_command: None,
                        output: format!("unknown connector `{}`", node.connector_ref),
                    },
                };
                (node.node_id, outcome)
            }
        });
        let outcomes = join_all(jobs).await;
        self.core
            .update(id, |r| {
                for (node_id, o) in outcomes {
                    if let Some(n) = r.nodes.get_mut(&node_id) {
                        n.cleanup = Some(o);
                    }
                }
                r.flags.clear();
                r.cleaned_up = true;
                Ok(())
            })
            .await?;
        self.status(id)
    }

    /// Union of connector pools narrowed by every `key=value` filter.
    pub async fn nodes(&self, filters: &[(String, String)]) -> Result<NodePool, DirectorError> {
        let mut pool = self.core.connectors.pool().await.map_err(|e| DirectorError::Connector(e.to_string()))?;
        for (k, v) in filters {
            pool = pool.filter(k, v);
        }
        Ok(pool)
    }

    /// Polls until the experiment is terminal or `timeout` passes.
    pub async fn wait_terminal(&self, id: &str, timeout: Duration) -> Result<StatusView, DirectorError> {
        self.wait_for(id, timeout, |s| s.is_terminal()).await
    }

    pub async fn wait_for(
        &self,
        id: &str,
        timeout: Duration,
        pred: impl Fn(ExperimentStatus) -> bool,
    ) -> Result<StatusView, DirectorError> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let s = self.status(id)?;
            if pred(s.status) || tokio::time::Instant::now() >= deadline {
                return Ok(s);
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    /// Stops all background work and detaches the gateway from in-process
    /// connectors, as if the process had exited. Nothing is persisted after
    /// this returns.
    pub fn shutdown(&self) {
        self.core.stopped.store(true, Ordering::SeqCst);
        for c in self.core.connectors.iter() {
            c.detach_gateway();
        }
        for h in self.core.workers.lock().unwrap().drain(..) {
            h.abort();
        }
    }
}

impl std::fmt::Debug for Director {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Director").field("connectors", &self.core.connectors).finish_non_exhaustive()
    }
}
