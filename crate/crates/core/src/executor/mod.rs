//! Node-resident executor: fetch the bundle, run stages in order with
//! concurrent tasks inside each stage, buffer results, report once at the
//! end of the pipeline.

mod bundle;
mod context;
mod delivery;
mod runner;

use std::path::PathBuf;
use std::sync::Arc;

use thiserror::Error;

use crate::connectivity::env;
use crate::gateway::{GatewayApi, GatewayError, HttpGateway};
use crate::tasks::ImplementationCatalog;

pub use bundle::{ExecutorSettings, PipelineBundle, PipelineReport, RetryPolicy, StageTrace, EXECUTOR_VERSION};
pub use context::{
    CaptureHandle, DirScratch, DirSpool, ExecutionObserver, MemScratch, MemSpool, Scratch, Spool, TaskContext,
};
pub use delivery::{deliver_report, drain_spool, DeliveryState};
pub use runner::{run_pipeline, run_stage};

#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error("missing configuration: {0}")]
    MissingConfig(&'static str),
    #[error("bundle: {0}")]
    Bundle(String),
    #[error("bundle digest does not match its contents")]
    DigestMismatch,
    #[error("bundle is for {found}, executor was launched for {expected}")]
    WrongBundle { expected: String, found: String },
    #[error("fetch bundle: {0}")]
    Fetch(#[from] GatewayError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Where the bundle comes from.
#[derive(Debug, Clone)]
pub enum BundleSource {
    Inline(Box<PipelineBundle>),
    Gateway,
}

impl BundleSource {
    /// `EXPFORGE_BUNDLE` is inline JSON when it starts with `{`, otherwise a
    /// file path.
    pub fn parse(value: &str) -> Result<Self, ExecutorError> {
        let text = if value.trim_start().starts_with('{') {
            value.to_string()
        } else {
            std::fs::read_to_string(value).map_err(|e| ExecutorError::Bundle(format!("{value}: {e}")))?
        };
        let b: PipelineBundle = serde_json::from_str(&text).map_err(|e| ExecutorError::Bundle(e.to_string()))?;
        Ok(BundleSource::Inline(Box::new(b)))
    }
}

/// Everything one executor run needs.
pub struct NodeAgent {
    pub experiment_id: String,
    pub node_id: String,
    pub exec_token: String,
    pub gateway: Arc<dyn GatewayApi>,
    pub scratch: Arc<dyn Scratch>,
    pub spool: Arc<dyn Spool>,
    pub catalog: Arc<ImplementationCatalog>,
    pub observer: Option<Arc<dyn ExecutionObserver>>,
    pub source: BundleSource,
}

#[derive(Debug, Clone)]
pub struct AgentOutcome {
    pub report: PipelineReport,
    pub delivery: DeliveryState,
    pub drained: Vec<(String, String, DeliveryState)>,
}

impl NodeAgent {
    async fn obtain_bundle(&self) -> Result<PipelineBundle, ExecutorError> {
        match &self.source {
            BundleSource::Inline(b) => Ok((**b).clone()),
            BundleSource::Gateway => {
                let policy = RetryPolicy::default();
                let mut attempt = 1;
                loop {
                    match self.gateway.fetch_bundle(&self.experiment_id, &self.node_id).await {
                        Ok(b) => return Ok(b),
                        Err(e) if e.is_retryable() && attempt < policy.max_attempts => {
                            tokio::time::sleep(policy.delay_after(attempt)).await;
                            attempt += 1;
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        }
    }

    /// Drains the spool, runs the pipeline and delivers the report. Errors
    /// are startup errors only.
    pub async fn run(self) -> Result<AgentOutcome, ExecutorError> {
        let drained = drain_spool(self.gateway.as_ref(), self.spool.as_ref()).await;

        let bundle = self.obtain_bundle().await?;
        if !bundle.verify_digest() {
            return Err(ExecutorError::DigestMismatch);
        }
        if bundle.experiment_id != self.experiment_id || bundle.node_id != self.node_id {
            return Err(ExecutorError::WrongBundle {
                expected: format!("{}/{}", self.experiment_id, self.node_id),
                found: format!("{}/{}", bundle.experiment_id, bundle.node_id),
            });
        }
        tracing::info!(experiment = %self.experiment_id, node = %self.node_id, token = %self.exec_token, "executor started");

        let mut ctx = TaskContext::new(
            &self.experiment_id,
            &self.node_id,
            bundle.node_kind,
            Arc::clone(&self.gateway),
            Arc::clone(&self.scratch),
        )
        .with_settings(bundle.settings.clone());
        if let Some(obs) = &self.observer {
            ctx = ctx.with_observer(Arc::clone(obs));
        }
        let ctx = Arc::new(ctx);
        let report = run_pipeline(&bundle, Arc::clone(&ctx), &self.catalog).await;

        // Captures left running are stopped with the executor.
        for (_, cap) in ctx.captures.lock().await.drain() {
            if let Some(mut child) = cap.process {
                let _ = child.kill().await;
            }
        }

        let delivery = deliver_report(
            &report,
            self.gateway.as_ref(),
            self.spool.as_ref(),
            bundle.settings.report_retry,
            self.observer.as_ref(),
        )
        .await;
        Ok(AgentOutcome { report, delivery, drained })
    }
}

fn var(name: &'static str) -> Result<String, ExecutorError> {
    std::env::var(name).ok().filter(|v| !v.is_empty()).ok_or(ExecutorError::MissingConfig(name))
}

/// Builds an agent from the `EXPFORGE_*` environment variables.
pub fn agent_from_env() -> Result<NodeAgent, ExecutorError> {
    let endpoint = var(env::GATEWAY)?;
    let experiment_id = var(env::EXPERIMENT_ID)?;
    let node_id = var(env::NODE_ID)?;
    let exec_token = std::env::var(env::EXEC_TOKEN).unwrap_or_default();
    let source = match std::env::var(env::BUNDLE) {
        Ok(v) if !v.is_empty() => BundleSource::parse(&v)?,
        _ => BundleSource::Gateway,
    };
    let scratch_dir = match std::env::var(env::SCRATCH) {
        Ok(v) if !v.is_empty() => PathBuf::from(v),
        _ => std::env::current_dir()?,
    };
    let spool_dir = match std::env::var(env::SPOOL_DIR) {
        Ok(v) if !v.is_empty() => PathBuf::from(v),
        _ => std::env::temp_dir().join("expforge-spool"),
    };
    Ok(NodeAgent {
        experiment_id,
        node_id,
        exec_token,
        gateway: Arc::new(HttpGateway::new(&endpoint)),
        scratch: Arc::new(DirScratch::new(scratch_dir)?),
        spool: Arc::new(DirSpool::new(spool_dir)?),
        catalog: Arc::new(ImplementationCatalog::builtin()),
        observer: None,
        source,
    })
}
