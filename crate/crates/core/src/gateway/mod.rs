//! Executor-facing service: bundle fetch, report ingestion, readiness flags
//! and the artifact store.
//!
//! Executors talk to the gateway through [`GatewayApi`]. The server-side
//! implementation is [`Gateway`]; remote executors use [`HttpGateway`].

mod http_client;
mod service;

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{PipelineBundle, PipelineReport};
use crate::model::ExperimentStatus;

pub use http_client::HttpGateway;
pub use service::Gateway;

/// A set readiness flag. `set_at_ns` is the gateway's wall clock, the single
/// ordering authority across nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagRecord {
    pub key: String,
    pub set_at_ns: i64,
    pub setter: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestOutcome {
    Accepted,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestAck {
    pub outcome: IngestOutcome,
    /// Report arrived after the node was declared timed-out or unreachable.
    #[serde(default)]
    pub late: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum GatewayError {
    #[error("gateway unreachable: {message}")]
    Transport { message: String },
    #[error("unknown experiment `{experiment_id}`")]
    UnknownExperiment { experiment_id: String },
    #[error("node `{node_id}` has no assignment in experiment `{experiment_id}`")]
    UnknownAssignment { experiment_id: String, node_id: String },
    #[error("operation not allowed while experiment is {status}")]
    WrongPhase { status: ExperimentStatus },
    #[error("report bundle digest does not match the deployment plan")]
    BundleMismatch,
    #[error("invalid request: {message}")]
    InvalidRequest { message: String },
    #[error("gateway internal error: {message}")]
    Internal { message: String },
}

impl GatewayError {
    pub fn transport(message: impl Into<String>) -> Self {
        GatewayError::Transport { message: message.into() }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport { .. } | GatewayError::Internal { .. })
    }
}

#[async_trait]
pub trait GatewayApi: Send + Sync {
    async fn fetch_bundle(&self, experiment_id: &str, node_id: &str) -> Result<PipelineBundle, GatewayError>;

    async fn ingest_report(&self, report: &PipelineReport) -> Result<IngestAck, GatewayError>;

    async fn set_flag(&self, experiment_id: &str, key: &str, node_id: &str) -> Result<FlagRecord, GatewayError>;

    async fn get_flag(&self, experiment_id: &str, key: &str) -> Result<Option<FlagRecord>, GatewayError>;

    /// Stores a file; returns its SHA-256 hex digest.
    async fn put_artifact(
        &self,
        experiment_id: &str,
        node_id: &str,
        name: &str,
        bytes: Vec<u8>,
    ) -> Result<String, GatewayError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FlagWait {
    Set(FlagRecord),
    TimedOut,
}

/// Polls `get_flag` until the flag is set or `timeout` passes. Transport
/// errors are retried until the deadline; if the gateway was never reached
/// the last error is returned.
pub async fn wait_for_flag(
    api: &dyn GatewayApi,
    experiment_id: &str,
    key: &str,
    timeout: Duration,
    poll_interval: Duration,
) -> Result<FlagWait, GatewayError> {
    let deadline = tokio::time::Instant::now() + timeout;
    let mut last_err = None;
    let mut reached = false;
    loop {
        match api.get_flag(experiment_id, key).await {
            Ok(Some(flag)) => return Ok(FlagWait::Set(flag)),
            Ok(None) => reached = true,
            Err(e) if e.is_retryable() => last_err = Some(e),
            Err(e) => return Err(e),
        }
        let now = tokio::time::Instant::now();
        if now >= deadline {
            return match last_err {
                Some(e) if !reached => Err(e),
                _ => Ok(FlagWait::TimedOut),
            };
        }
        tokio::time::sleep(poll_interval.min(deadline - now)).await;
    }
}
