//! Remote hosts reached through the system `ssh` client.
//!
//! Every operation is one non-interactive session. Exit status 255 is the
//! client's own failure, so it is read as the host being unreachable.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::process::Stdio;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use base64::Engine;
use serde::{Deserialize, Serialize};
use tokio::process::Command;

use super::{
    clip, env, CleanupOutcome, Connector, ConnectorError, ExecutorLaunch, LaunchHandle, NodeHealth, PrepareOutcome,
};
use crate::compiler::EnvironmentSpec;
use crate::model::{NodeDescriptor, NodeKind, NodePool};

const SSH_FAILURE: i32 = 255;

fn default_port() -> u16 {
    22
}

fn default_ssh() -> String {
    "ssh".into()
}

fn default_connect_timeout() -> u64 {
    10
}

fn default_workdir() -> String {
    ".expforge".into()
}

fn default_remote_executor() -> String {
    "expforge".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SshHost {
    pub node_id: String,
    pub host: String,
    #[serde(default)]
    pub user: Option<String>,
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SshConfig {
    pub name: String,
    pub hosts: Vec<SshHost>,
    #[serde(default)]
    pub identity_file: Option<PathBuf>,
    #[serde(default = "default_ssh")]
    pub ssh_program: String,
    #[serde(default = "default_connect_timeout")]
    pub connect_timeout_s: u64,
    /// Relative to the remote login directory unless absolute.
    #[serde(default = "default_workdir")]
    pub remote_workdir: String,
    #[serde(default = "default_remote_executor")]
    pub remote_executor: String,
    #[serde(default)]
    pub extra_args: Vec<String>,
}

impl SshConfig {
    pub fn new(name: impl Into<String>, hosts: Vec<SshHost>) -> Self {
        Self {
            name: name.into(),
            hosts,
            identity_file: None,
            ssh_program: default_ssh(),
            connect_timeout_s: default_connect_timeout(),
            remote_workdir: default_workdir(),
            remote_executor: default_remote_executor(),
            extra_args: Vec::new(),
        }
    }
}

/// Single-quotes `s` for a POSIX shell.
pub(crate) fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

struct Session {
    code: Option<i32>,
    output: String,
}

pub struct SshConnector {
    config: SshConfig,
    tokens: Mutex<HashSet<String>>,
}

impl SshConnector {
    pub fn new(config: SshConfig) -> Self {
        Self { config, tokens: Mutex::new(HashSet::new()) }
    }

    fn host(&self, node: &NodeDescriptor) -> Result<&SshHost, ConnectorError> {
        self.config
            .hosts
            .iter()
            .find(|h| h.node_id == node.node_id)
            .ok_or_else(|| ConnectorError::UnknownNode(node.node_id.clone()))
    }

    fn scratch(&self) -> String {
        format!("{}/scratch", self.config.remote_workdir)
    }

    /// Wraps `script` so it runs inside the remote scratch directory.
    fn in_scratch(&self, script: &str) -> String {
        let dir = shell_quote(&self.scratch());
        format!("mkdir -p {dir} && cd {dir} && {}=\"$PWD\" && export {} && {script}", env::SCRATCH, env::SCRATCH)
    }

    async fn session(&self, host: &SshHost, remote: &str) -> std::io::Result<Session> {
        let mut cmd = Command::new(&self.config.ssh_program);
        cmd.arg("-o")
            .arg("BatchMode=yes")
            .arg("-o")
            .arg(format!("ConnectTimeout={}", self.config.connect_timeout_s))
            .arg("-p")
            .arg(host.port.to_string());
        if let Some(id) = &self.config.identity_file {
            cmd.arg("-i").arg(id);
        }
        cmd.args(&self.config.extra_args);
        let target = match &host.user {
            Some(u) => format!("{u}@{}", host.host),
            None => host.host.clone(),
        };
        cmd.arg(target).arg(remote).stdin(Stdio::null()).kill_on_drop(true);
        let limit = Duration::from_secs(self.config.connect_timeout_s.max(1) * 60);
        let out = tokio::time::timeout(limit, cmd.output())
            .await
            .map_err(|_| std::io::Error::new(std::io::ErrorKind::TimedOut, "ssh session timed out"))??;
        let mut output = String::from_utf8_lossy(&out.stdout).into_owned();
        output.push_str(&String::from_utf8_lossy(&out.stderr));
        Ok(Session { code: out.status.code(), output })
    }

    async fn run_step(&self, host: &SshHost, command: &str) -> Result<(), PrepareOutcome> {
        match self.session(host, &self.in_scratch(command)).await {
            Ok(Session { code: Some(0), .. }) => Ok(()),
            Ok(s) => Err(PrepareOutcome::PrepareFailed { command: command.to_string(), output: clip(&s.output) }),
            Err(e) => Err(PrepareOutcome::PrepareFailed { command: command.to_string(), output: e.to_string() }),
        }
    }
}

#[async_trait]
impl Connector for SshConnector {
    fn name(&self) -> &str {
        &self.config.name
    }

    async fn list_nodes(&self) -> Result<NodePool, ConnectorError> {
        let nodes = self
            .config
            .hosts
            .iter()
            .map(|h| {
                let mut d = NodeDescriptor::new(&h.node_id, NodeKind::SshHost, &self.config.name);
                d.attributes = h.attributes.clone();
                d
            })
            .collect();
        NodePool::new(nodes).map_err(|e| ConnectorError::Config(e.to_string()))
    }

    async fn prepare(&self, node: &NodeDescriptor, env: &EnvironmentSpec) -> PrepareOutcome {
        let host = match self.host(node) {
            Ok(h) => h,
            Err(e) => return PrepareOutcome::PrepareFailed { command: String::new(), output: e.to_string() },
        };
        let b64 = base64::engine::general_purpose::STANDARD;
        let staging = env.staged_files.iter().map(|f| {
            let path = shell_quote(&f.path);
            (
                format!("stage {}", f.path),
                format!("mkdir -p \"$(dirname {path})\" && printf %s {} | base64 -d > {path}", shell_quote(&b64.encode(&f.content))),
            )
        });
        // The first session also creates the scratch directory.
        let steps = std::iter::once(("connect".to_string(), "true".to_string()))
            .chain(env.setup_commands.iter().map(|c| (c.clone(), c.clone())))
            .chain(staging)
            .chain(env.verify_commands.iter().map(|c| (c.clone(), c.clone())));
        for (label, command) in steps {
            if let Err(PrepareOutcome::PrepareFailed { output, .. }) = self.run_step(host, &command).await {
                return PrepareOutcome::PrepareFailed { command: label, output };
            }
        }
        PrepareOutcome::Prepared
    }

    async fn launch_executor(
        &self,
        node: &NodeDescriptor,
        launch: &ExecutorLaunch,
    ) -> Result<LaunchHandle, ConnectorError> {
        let host = self.host(node)?;
        if !self.tokens.lock().unwrap().insert(launch.exec_token.clone()) {
            return Err(ConnectorError::LaunchFailed {
                node: node.node_id.clone(),
                reason: "execution token already used".into(),
            });
        }
        let mut vars = vec![
            (env::GATEWAY, launch.gateway_endpoint.clone()),
            (env::EXPERIMENT_ID, launch.experiment_id.clone()),
            (env::NODE_ID, launch.node_id.clone()),
            (env::EXEC_TOKEN, launch.exec_token.clone()),
        ];
        if let Some(b) = &launch.bundle_ref {
            vars.push((env::BUNDLE, b.clone()));
        }
        let mut assignments: Vec<String> = vars.iter().map(|(k, v)| format!("{k}={}", shell_quote(v))).collect();
        // The script runs inside scratch; the spool sits next to it so
        // cleanup never removes undelivered reports.
        assignments.push(format!("{}=\"$(dirname \"$PWD\")/spool\"", env::SPOOL_DIR));
        let log = shell_quote(&format!("../{}.log", launch.experiment_id));
        let script = self.in_scratch(&format!(
            "{} nohup {} executor > {log} 2>&1 < /dev/null & echo $!",
            assignments.join(" "),
            shell_quote(&self.config.remote_executor)
        ));
        let s = self.session(host, &script).await.map_err(|e| ConnectorError::NodeUnreachable {
            node: node.node_id.clone(),
            reason: e.to_string(),
        })?;
        match s.code {
            Some(0) => {}
            Some(SSH_FAILURE) | None => {
                return Err(ConnectorError::NodeUnreachable { node: node.node_id.clone(), reason: clip(&s.output) })
            }
            Some(c) => {
                return Err(ConnectorError::LaunchFailed {
                    node: node.node_id.clone(),
                    reason: format!("exit {c}: {}", clip(&s.output)),
                })
            }
        }
        let pid = s.output.lines().rev().find_map(|l| l.trim().parse::<u32>().ok()).ok_or_else(|| {
            ConnectorError::LaunchFailed { node: node.node_id.clone(), reason: "remote pid not reported".into() }
        })?;
        Ok(LaunchHandle {
            connector: self.config.name.clone(),
            node_id: node.node_id.clone(),
            experiment_id: launch.experiment_id.clone(),
            exec_token: launch.exec_token.clone(),
            handle_id: pid.to_string(),
        })
    }

    async fn stop_executor(&self, handle: &LaunchHandle) -> Result<(), ConnectorError> {
        let host = self
            .config
            .hosts
            .iter()
            .find(|h| h.node_id == handle.node_id)
            .ok_or_else(|| ConnectorError::UnknownNode(handle.node_id.clone()))?;
        let pid: u32 = handle.handle_id.parse().map_err(|_| ConnectorError::UnknownHandle(handle.handle_id.clone()))?;
        let s = self
            .session(host, &format!("kill {pid} 2>/dev/null; true"))
            .await
            .map_err(|e| ConnectorError::NodeUnreachable { node: handle.node_id.clone(), reason: e.to_string() })?;
        if s.code == Some(SSH_FAILURE) {
            return Err(ConnectorError::NodeUnreachable { node: handle.node_id.clone(), reason: clip(&s.output) });
        }
        Ok(())
    }

    async fn health(&self, node: &NodeDescriptor) -> NodeHealth {
        let Ok(host) = self.host(node) else {
            return NodeHealth::Unreachable;
        };
        match self.session(host, "true").await {
            Ok(Session { code: Some(0), .. }) => NodeHealth::Reachable,
            _ => NodeHealth::Unreachable,
        }
    }

    async fn cleanup(&self, node: &NodeDescriptor, commands: &[String]) -> CleanupOutcome {
        let host = match self.host(node) {
            Ok(h) => h,
            Err(e) => return CleanupOutcome { ok: false, failed_command: None, output: e.to_string() },
        };
        let mut outcome = CleanupOutcome { ok: true, failed_command: None, output: String::new() };
        for c in commands {
            if let Err(PrepareOutcome::PrepareFailed { output, .. }) = self.run_step(host, c).await {
                if outcome.ok {
                    outcome = CleanupOutcome { ok: false, failed_command: Some(c.clone()), output };
                }
            }
        }
        outcome
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoting_survives_single_quotes() {
        assert_eq!(shell_quote("a'b"), r"'a'\''b'");
        assert_eq!(shell_quote(""), "''");
    }

    #[tokio::test]
    async fn lists_configured_hosts() {
        let hosts = (0..3)
            .map(|i| SshHost {
                node_id: format!("h{i}"),
                host: format!("10.0.0.{i}"),
                user: None,
                port: 22,
                attributes: BTreeMap::from([("location".into(), "campus".into())]),
            })
            .collect();
        let c = SshConnector::new(SshConfig::new("lab", hosts));
        let pool = c.list_nodes().await.unwrap();
        assert_eq!(pool.len(), 3);
        assert!(pool.nodes().iter().all(|n| n.kind == NodeKind::SshHost && n.connector_ref == "lab"));
    }
}
