use std::process::Stdio;

use async_trait::async_trait;
use tokio::io::AsyncReadExt;

use super::simcmd::SimShell;
use super::{str_param, TaskFailure, TaskImplementation, TaskOutput};
use crate::connectivity::env;
use crate::executor::TaskContext;
use crate::model::{Params, Payload};

/// Kills a whole process group when dropped, so a cancelled task leaves no
/// stragglers behind.
pub(crate) struct GroupGuard {
    pgid: Option<i32>,
}

impl GroupGuard {
    pub(crate) fn new(pid: Option<u32>) -> Self {
        Self { pgid: pid.map(|p| p as i32) }
    }

    pub(crate) fn disarm(&mut self) {
        self.pgid = None;
    }
}

impl Drop for GroupGuard {
    fn drop(&mut self) {
        if let Some(pgid) = self.pgid {
            // SAFETY: killpg has no memory-safety preconditions.
            unsafe {
                libc::killpg(pgid, libc::SIGKILL);
            }
        }
    }
}

/// Runs `sh -c` in the node scratch directory, in its own process group.
pub struct ProcessShell {
    id: &'static str,
}

impl ProcessShell {
    pub fn new(id: &'static str) -> Self {
        Self { id }
    }
}

#[async_trait]
impl TaskImplementation for ProcessShell {
    fn id(&self) -> &str {
        self.id
    }

    async fn run(&self, params: &Params, ctx: &TaskContext) -> Result<TaskOutput, TaskFailure> {
        let command = str_param(params, "command")?;
        if command.trim().is_empty() {
            return Err(TaskFailure::new("command must be non-empty"));
        }
        let mut cmd = tokio::process::Command::new("sh");
        cmd.arg("-c")
            .arg(format!("exec 2>&1\n{command}"))
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .process_group(0)
            .kill_on_drop(true);
        if let Some(root) = ctx.scratch.root() {
            cmd.current_dir(root).env(env::SCRATCH, root);
        }
        let mut child = cmd.spawn().map_err(|e| TaskFailure::new(format!("spawn sh: {e}")))?;
        let mut guard = GroupGuard::new(child.id());

        let mut out = Vec::new();
        if let Some(mut stdout) = child.stdout.take() {
            stdout.read_to_end(&mut out).await.map_err(|e| TaskFailure::new(format!("read output: {e}")))?;
        }
        let status = child.wait().await.map_err(|e| TaskFailure::new(format!("wait: {e}")))?;
        guard.disarm();

        let text = String::from_utf8_lossy(&out).into_owned();
        match status.code() {
            Some(0) => Ok(TaskOutput::text(text)),
            Some(code) => Err(TaskFailure::new(format!("exit code {code}")).with_payload(Payload::Text(text))),
            None => Err(TaskFailure::new(format!("terminated by signal: {status}")).with_payload(Payload::Text(text))),
        }
    }
}

/// Shell task on a simulated node: interprets the simulated vocabulary.
pub struct SimulatedShell;

#[async_trait]
impl TaskImplementation for SimulatedShell {
    fn id(&self) -> &str {
        "builtin.shell.sim"
    }

    async fn run(&self, params: &Params, ctx: &TaskContext) -> Result<TaskOutput, TaskFailure> {
        let command = str_param(params, "command")?;
        if command.trim().is_empty() {
            return Err(TaskFailure::new("command must be non-empty"));
        }
        let out = SimShell::new(ctx.scratch.as_ref()).run(command).await;
        if out.success() {
            Ok(TaskOutput::text(out.output))
        } else {
            Err(TaskFailure::new(format!("exit code {}", out.exit_code)).with_payload(Payload::Text(out.output)))
        }
    }
}
