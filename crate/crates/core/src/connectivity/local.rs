//! The host this process runs on, as a single `linux-shell` node.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::Stdio;
use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::process::Command;
use tokio::sync::oneshot;

use super::{
    clip, env, CleanupOutcome, Connector, ConnectorError, ExecutorLaunch, LaunchHandle, NodeHealth, PrepareOutcome,
};
use crate::compiler::EnvironmentSpec;
use crate::model::{NodeDescriptor, NodeKind, NodePool};

fn default_name() -> String {
    "local".into()
}

fn default_node_id() -> String {
    "localhost".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_node_id")]
    pub node_id: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    /// Setup, verify and executor scratch live under `{work_dir}/scratch`.
    pub work_dir: PathBuf,
    /// Binary providing the `executor` subcommand; defaults to the running
    /// executable.
    #[serde(default)]
    pub executor_program: Option<PathBuf>,
    #[serde(default)]
    pub spool_dir: Option<PathBuf>,
}

impl LocalConfig {
    pub fn new(work_dir: impl Into<PathBuf>) -> Self {
        Self {
            name: default_name(),
            node_id: default_node_id(),
            attributes: BTreeMap::new(),
            work_dir: work_dir.into(),
            executor_program: None,
            spool_dir: None,
        }
    }

    pub fn executor_program(mut self, program: impl Into<PathBuf>) -> Self {
        self.executor_program = Some(program.into());
        self
    }
}

pub struct LocalConnector {
    config: LocalConfig,
    descriptor: NodeDescriptor,
    tokens: Mutex<HashSet<String>>,
    running: Mutex<HashMap<String, oneshot::Sender<()>>>,
}

impl LocalConnector {
    pub fn new(config: LocalConfig) -> Self {
        let mut descriptor = NodeDescriptor::new(&config.node_id, NodeKind::LinuxShell, &config.name);
        descriptor.attributes = config.attributes.clone();
        Self { config, descriptor, tokens: Mutex::new(HashSet::new()), running: Mutex::new(HashMap::new()) }
    }

    pub fn scratch_dir(&self) -> PathBuf {
        self.config.work_dir.join("scratch")
    }

    pub fn log_path(&self, experiment_id: &str) -> PathBuf {
        self.config.work_dir.join("logs").join(format!("{experiment_id}.log"))
    }

    fn spool_dir(&self) -> PathBuf {
        self.config.spool_dir.clone().unwrap_or_else(|| self.config.work_dir.join("spool"))
    }

    fn check(&self, node: &NodeDescriptor) -> Result<(), ConnectorError> {
        if node.node_id != self.descriptor.node_id {
            return Err(ConnectorError::UnknownNode(node.node_id.clone()));
        }
        Ok(())
    }

    async fn sh(&self, command: &str) -> std::io::Result<(bool, String)> {
        let scratch = self.scratch_dir();
        tokio::fs::create_dir_all(&scratch).await?;
        let out = Command::new("sh")
            .arg("-c")
            .arg(command)
            .current_dir(&scratch)
            .env(env::SCRATCH, &scratch)
            .stdin(Stdio::null())
            .kill_on_drop(true)
            .output()
            .await?;
        let mut text = String::from_utf8_lossy(&out.stdout).into_owned();
        text.push_str(&String::from_utf8_lossy(&out.stderr));
        Ok((out.status.success(), text))
    }

    async fn stage(&self, path: &str, content: &str) -> std::io::Result<()> {
        let rel = Path::new(path);
        if rel.is_absolute() || rel.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidInput, "path escapes scratch"));
        }
        let full = self.scratch_dir().join(rel);
        if let Some(parent) = full.parent() {
            tokio::fs::create_dir_all(parent).await?;
        }
        tokio::fs::write(full, content).await
    }
}

#[async_trait]
impl Connector for LocalConnector {
    fn name(&self) -> &str {
        &self.config.name
    }

    async fn list_nodes(&self) -> Result<NodePool, ConnectorError> {
        NodePool::new(vec![self.descriptor.clone()]).map_err(|e| ConnectorError::Config(e.to_string()))
    }

    async fn prepare(&self, node: &NodeDescriptor, env: &EnvironmentSpec) -> PrepareOutcome {
        if let Err(e) = self.check(node) {
            return PrepareOutcome::PrepareFailed { command: String::new(), output: e.to_string() };
        }
        for c in &env.setup_commands {
            match self.sh(c).await {
                Ok((true, _)) => {}
                Ok((false, out)) => return PrepareOutcome::PrepareFailed { command: c.clone(), output: clip(&out) },
                Err(e) => return PrepareOutcome::PrepareFailed { command: c.clone(), output: e.to_string() },
            }
        }
        for f in &env.staged_files {
            if let Err(e) = self.stage(&f.path, &f.content).await {
                return PrepareOutcome::PrepareFailed { command: format!("stage {}", f.path), output: e.to_string() };
            }
        }
        for c in &env.verify_commands {
            match self.sh(c).await {
                Ok((true, _)) => {}
                Ok((false, out)) => return PrepareOutcome::PrepareFailed { command: c.clone(), output: clip(&out) },
                Err(e) => return PrepareOutcome::PrepareFailed { command: c.clone(), output: e.to_string() },
            }
        }
        PrepareOutcome::Prepared
    }

    async fn launch_executor(
        &self,
        node: &NodeDescriptor,
        launch: &ExecutorLaunch,
    ) -> Result<LaunchHandle, ConnectorError> {
        self.check(node)?;
        let failed = |reason: String| ConnectorError::LaunchFailed { node: node.node_id.clone(), reason };
        if !self.tokens.lock().unwrap().insert(launch.exec_token.clone()) {
            return Err(failed("execution token already used".into()));
        }
        let program = match &self.config.executor_program {
            Some(p) => p.clone(),
            None => std::env::current_exe().map_err(|e| failed(e.to_string()))?,
        };
        let scratch = self.scratch_dir();
        let log_path = self.log_path(&launch.experiment_id);
        std::fs::create_dir_all(&scratch).map_err(|e| failed(e.to_string()))?;
        std::fs::create_dir_all(log_path.parent().expect("log dir")).map_err(|e| failed(e.to_string()))?;
        let log = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| failed(e.to_string()))?;
        let log_err = log.try_clone().map_err(|e| failed(e.to_string()))?;

        let mut cmd = Command::new(&program);
        cmd.arg("executor")
            .current_dir(&scratch)
            .env(env::GATEWAY, &launch.gateway_endpoint)
            .env(env::EXPERIMENT_ID, &launch.experiment_id)
            .env(env::NODE_ID, &launch.node_id)
            .env(env::EXEC_TOKEN, &launch.exec_token)
            .env(env::SCRATCH, &scratch)
            .env(env::SPOOL_DIR, self.spool_dir())
            .stdin(Stdio::null())
            .stdout(log)
            .stderr(log_err)
            .process_group(0);
        match &launch.bundle_ref {
            Some(b) => cmd.env(env::BUNDLE, b),
            None => cmd.env_remove(env::BUNDLE),
        };
        let mut child = cmd.spawn().map_err(|e| failed(format!("{}: {e}", program.display())))?;
        let pid = child.id().unwrap_or(0);
        let handle_id = format!("pid-{pid}");

        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        self.running.lock().unwrap().insert(handle_id.clone(), stop_tx);
        tokio::spawn(async move {
            tokio::select! {
                _ = child.wait() => {}
                _ = stop_rx => {
                    if pid > 0 {
                        // SAFETY: signalling a process group we created.
                        unsafe { libc::killpg(pid as libc::pid_t, libc::SIGKILL) };
                    }
                    let _ = child.wait().await;
                }
            }
        });

        Ok(LaunchHandle {
            connector: self.config.name.clone(),
            node_id: node.node_id.clone(),
            experiment_id: launch.experiment_id.clone(),
            exec_token: launch.exec_token.clone(),
            handle_id,
        })
    }

    async fn stop_executor(&self, handle: &LaunchHandle) -> Result<(), ConnectorError> {
        if let Some(tx) = self.running.lock().unwrap().remove(&handle.handle_id) {
            let _ = tx.send(());
        }
        Ok(())
    }

    async fn health(&self, node: &NodeDescriptor) -> NodeHealth {
        match self.check(node) {
            Ok(()) => NodeHealth::Reachable,
            Err(_) => NodeHealth::Unreachable,
        }
    }

    async fn cleanup(&self, node: &NodeDescriptor, commands: &[String]) -> CleanupOutcome {
        if let Err(e) = self.check(node) {
            return CleanupOutcome { ok: false, failed_command: None, output: e.to_string() };
        }
        let mut outcome = CleanupOutcome { ok: true, failed_command: None, output: String::new() };
        for c in commands {
            let (ok, out) = match self.sh(c).await {
                Ok(r) => r,
                Err(e) => (false, e.to_string()),
            };
            if !ok && outcome.ok {
                outcome = CleanupOutcome { ok: false, failed_command: Some(c.clone()), output: clip(&out) };
            }
        }
        outcome
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::{EnvironmentBody, EnvironmentKey, StagedFileSpec};

    fn env(setup: &[&str], files: &[(&str, &str)], verify: &[&str]) -> EnvironmentSpec {
        EnvironmentSpec::new(
            EnvironmentKey { pipeline_digest: "d".into(), node_kind: NodeKind::LinuxShell },
            EnvironmentBody {
                setup_commands: setup.iter().map(|s| s.to_string()).collect(),
                staged_files: files
                    .iter()
                    .map(|(p, c)| StagedFileSpec { path: p.to_string(), content: c.to_string(), digest: String::new() })
                    .collect(),
                verify_commands: verify.iter().map(|s| s.to_string()).collect(),
            },
        )
    }

    #[tokio::test]
    async fn one_linux_shell_node() {
        let dir = tempfile::tempdir().unwrap();
        let c = LocalConnector::new(LocalConfig::new(dir.path()));
        let pool = c.list_nodes().await.unwrap();
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.nodes()[0].kind, NodeKind::LinuxShell);
    }

    #[tokio::test]
    async fn prepare_runs_setup_stages_and_verifies() {
        let dir = tempfile::tempdir().unwrap();
        let c = LocalConnector::new(LocalConfig::new(dir.path()));
        let node = c.list_nodes().await.unwrap().nodes()[0].clone();
        let spec = env(&["echo one > a.txt"], &[("conf/x.cfg", "k=v")], &["test -f a.txt", "grep -q k=v conf/x.cfg"]);
        assert!(c.prepare(&node, &spec).await.is_prepared());
        match c.prepare(&node, &env(&[], &[], &["true", "false"])).await {
            PrepareOutcome::PrepareFailed { command, .. } => assert_eq!(command, "false"),
            other => panic!("{other:?}"),
        }
        assert!(!c.prepare(&node, &env(&[], &[("../out", "x")], &[])).await.is_prepared());
    }

    #[tokio::test]
    async fn cleanup_reports_first_failure() {
        let dir = tempfile::tempdir().unwrap();
        let c = LocalConnector::new(LocalConfig::new(dir.path()));
        let node = c.list_nodes().await.unwrap().nodes()[0].clone();
        let out = c.cleanup(&node, &["true".into(), "echo bad; exit 4".into(), "false".into()]).await;
        assert!(!out.ok);
        assert_eq!(out.failed_command.as_deref(), Some("echo bad; exit 4"));
        assert!(out.output.contains("bad"));
    }
}
