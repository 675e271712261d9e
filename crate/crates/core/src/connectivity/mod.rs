//! Connectivity manager: one interface over every deployment backend.
//!
//! The director only ever talks to nodes through [`Connector`]. Three
//! backends ship here: the local host ([`LocalConnector`]), remote hosts over
//! `ssh` ([`SshConnector`]) and a deterministic simulated infrastructure with
//! fault injection ([`SimulatedConnector`]).

mod config;
mod local;
pub mod sim;
mod ssh;

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::EnvironmentSpec;
use crate::gateway::GatewayApi;
use crate::model::{NodeDescriptor, NodePool, PoolError};

pub use config::{build_connectors, ConnectorSpec, ConnectorsFile};
pub use local::{LocalConfig, LocalConnector};
pub use sim::{FaultModel, SimConfig, SimEvent, SimNodeGroup, SimulatedConnector, SimulatedInfrastructure};
pub use ssh::{SshConfig, SshConnector, SshHost};

/// Environment variable names understood by the node executor.
pub mod env {
    pub const GATEWAY: &str = "EXPFORGE_GATEWAY";
    pub const EXPERIMENT_ID: &str = "EXPFORGE_EXPERIMENT_ID";
    pub const NODE_ID: &str = "EXPFORGE_NODE_ID";
    pub const BUNDLE: &str = "EXPFORGE_BUNDLE";
    pub const EXEC_TOKEN: &str = "EXPFORGE_EXEC_TOKEN";
    pub const SCRATCH: &str = "EXPFORGE_SCRATCH";
    pub const SPOOL_DIR: &str = "EXPFORGE_SPOOL_DIR";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutorLaunch {
    pub gateway_endpoint: String,
    pub experiment_id: String,
    pub node_id: String,
    /// Unique per (experiment, node); a connector refuses to launch twice
    /// with the same token.
    pub exec_token: String,
    /// Inline bundle or path; `None` means fetch from the gateway.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaunchHandle {
    pub connector: String,
    pub node_id: String,
    pub experiment_id: String,
    pub exec_token: String,
    pub handle_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum PrepareOutcome {
    Prepared,
    PrepareFailed { command: String, output: String },
}

impl PrepareOutcome {
    pub fn is_prepared(&self) -> bool {
        matches!(self, PrepareOutcome::Prepared)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeHealth {
    Reachable,
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanupOutcome {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_command: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub output: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConnectorError {
    #[error("connector unavailable: {0}")]
    Unavailable(String),
    #[error("node `{node}` unreachable: {reason}")]
    NodeUnreachable { node: String, reason: String },
    #[error("launch on `{node}` failed: {reason}")]
    LaunchFailed { node: String, reason: String },
    #[error("node `{0}` does not belong to this connector")]
    UnknownNode(String),
    #[error("unknown launch handle `{0}`")]
    UnknownHandle(String),
    #[error("connector configuration: {0}")]
    Config(String),
}

#[async_trait]
pub trait Connector: Send + Sync {
    fn name(&self) -> &str;

    async fn list_nodes(&self) -> Result<NodePool, ConnectorError>;

    /// Runs setup commands in order, stages files, then runs every verify
    /// command. Prepared only if all verify commands exit 0.
    async fn prepare(&self, node: &NodeDescriptor, env: &EnvironmentSpec) -> PrepareOutcome;

    async fn launch_executor(
        &self,
        node: &NodeDescriptor,
        launch: &ExecutorLaunch,
    ) -> Result<LaunchHandle, ConnectorError>;

    async fn stop_executor(&self, handle: &LaunchHandle) -> Result<(), ConnectorError>;

    async fn health(&self, node: &NodeDescriptor) -> NodeHealth;

    /// Runs experiment cleanup commands on a node.
    async fn cleanup(&self, node: &NodeDescriptor, commands: &[String]) -> CleanupOutcome;

    /// In-process connectors route executor traffic to this gateway. Remote
    /// connectors reach it through the endpoint in [`ExecutorLaunch`].
    fn attach_gateway(&self, _gateway: Arc<dyn GatewayApi>) {}

    fn detach_gateway(&self) {}
}

/// Named connector instances in configuration order.
#[derive(Clone, Default)]
pub struct ConnectorRegistry {
    connectors: Vec<Arc<dyn Connector>>,
}

impl ConnectorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, connector: Arc<dyn Connector>) -> Self {
        self.register(connector);
        self
    }

    /// Replaces any connector with the same name.
    pub fn register(&mut self, connector: Arc<dyn Connector>) {
        self.connectors.retain(|c| c.name() != connector.name());
        self.connectors.push(connector);
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Connector>> {
        self.connectors.iter().find(|c| c.name() == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<dyn Connector>> {
        self.connectors.iter()
    }

    /// Union of every connector's pool, in registry order.
    pub async fn pool(&self) -> Result<NodePool, ConnectorError> {
        let mut pools = Vec::with_capacity(self.connectors.len());
        for c in &self.connectors {
            pools.push(c.list_nodes().await?);
        }
        NodePool::merge(pools).map_err(|e: PoolError| ConnectorError::Config(e.to_string()))
    }
}

impl std::fmt::Debug for ConnectorRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.connectors.iter().map(|c| c.name())).finish()
    }
}

/// Output of a command, truncated for error messages.
pub(crate) fn clip(output: &str) -> String {
    const MAX: usize = 4096;
    if output.len() <= MAX {
        return output.to_string();
    }
    let mut end = MAX;
    while !output.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...[truncated]", &output[..end])
}
