use std::process::Stdio;
use std::time::Duration;

use async_trait::async_trait;
use serde_json::json;

use super::{opt_str_param, str_param, TaskFailure, TaskImplementation, TaskOutput};
use crate::executor::{CaptureHandle, TaskContext};
use crate::model::Params;

const DEFAULT_HANDLE: &str = "default";

/// pcap global header: magic, v2.4, zone 0, sigfigs 0, snaplen 65535,
/// linktype ethernet.
pub(crate) const PCAP_HEADER: [u8; 24] = [
    0xd4, 0xc3, 0xb2, 0xa1, 0x02, 0x00, 0x04, 0x00, 0, 0, 0, 0, 0, 0, 0, 0, 0xff, 0xff, 0x00, 0x00, 0x01, 0x00, 0x00,
    0x00,
];

fn capture_params(params: &Params) -> Result<(String, String, String), TaskFailure> {
    let iface = str_param(params, "iface")?.to_string();
    let out_path = str_param(params, "out_path")?.to_string();
    let handle = opt_str_param(params, "handle")?.unwrap_or(DEFAULT_HANDLE).to_string();
    Ok((iface, out_path, handle))
}

pub struct TcpdumpCapture;

#[async_trait]
impl TaskImplementation for TcpdumpCapture {
    fn id(&self) -> &str {
        "builtin.capture.tcpdump"
    }

    async fn run(&self, params: &Params, ctx: &TaskContext) -> Result<TaskOutput, TaskFailure> {
        let (iface, out_path, handle) = capture_params(params)?;
        let mut captures = ctx.captures.lock().await;
        if captures.contains_key(&handle) {
            return Err(TaskFailure::new(format!("capture `{handle}` already running")));
        }
        let root = ctx.scratch.root().ok_or_else(|| TaskFailure::new("capture needs a real scratch directory"))?;
        let file = root.join(&out_path);
        if let Some(parent) = file.parent() {
            std::fs::create_dir_all(parent).map_err(|e| TaskFailure::new(format!("create {}: {e}", parent.display())))?;
        }
        let mut child = tokio::process::Command::new("tcpdump")
            .args(["-i", &iface, "-U", "-w"])
            .arg(&file)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .process_group(0)
            .spawn()
            .map_err(|e| TaskFailure::new(format!("spawn tcpdump: {e}")))?;

        // An immediate exit means tcpdump rejected the interface or lacks
        // privileges.
        tokio::time::sleep(Duration::from_millis(200)).await;
        if let Ok(Some(status)) = child.try_wait() {
            let mut err = String::new();
            if let Some(mut s) = child.stderr.take() {
                use tokio::io::AsyncReadExt;
                let _ = s.read_to_string(&mut err).await;
            }
            return Err(TaskFailure::new(format!("tcpdump exited ({status}): {}", err.trim())));
        }
        captures.insert(handle.clone(), CaptureHandle { out_path: out_path.clone(), iface: iface.clone(), process: Some(child) });
        Ok(TaskOutput::json(json!({ "handle": handle, "iface": iface, "out_path": out_path })))
    }
}

/// Records capture intent and writes an empty pcap file.
pub struct StubCapture;

#[async_trait]
impl TaskImplementation for StubCapture {
    fn id(&self) -> &str {
        "builtin.capture.stub"
    }

    async fn run(&self, params: &Params, ctx: &TaskContext) -> Result<TaskOutput, TaskFailure> {
        let (iface, out_path, handle) = capture_params(params)?;
        let mut captures = ctx.captures.lock().await;
        if captures.contains_key(&handle) {
            return Err(TaskFailure::new(format!("capture `{handle}` already running")));
        }
        ctx.scratch
            .write(&out_path, &PCAP_HEADER)
            .map_err(|e| TaskFailure::new(format!("write {out_path}: {e}")))?;
        captures.insert(handle.clone(), CaptureHandle { out_path: out_path.clone(), iface: iface.clone(), process: None });
        Ok(TaskOutput::json(json!({ "handle": handle, "iface": iface, "out_path": out_path, "simulated": true })))
    }
}

pub struct StopCapture;

#[async_trait]
impl TaskImplementation for StopCapture {
    fn id(&self) -> &str {
        "builtin.capture.stop"
    }

    async fn run(&self, params: &Params, ctx: &TaskContext) -> Result<TaskOutput, TaskFailure> {
        let handle = opt_str_param(params, "handle")?.unwrap_or(DEFAULT_HANDLE).to_string();
        let cap = ctx
            .captures
            .lock()
            .await
            .remove(&handle)
            .ok_or_else(|| TaskFailure::new(format!("no active capture `{handle}`")))?;
        if let Some(mut child) = cap.process {
            if let Some(pid) = child.id() {
                // SAFETY: kill has no memory-safety preconditions.
                unsafe {
                    libc::kill(pid as i32, libc::SIGTERM);
                }
            }
            if tokio::time::timeout(Duration::from_secs(5), child.wait()).await.is_err() {
                let _ = child.kill().await;
            }
        }
        let bytes = ctx
            .scratch
            .size(&cap.out_path)
            .map_err(|e| TaskFailure::new(format!("capture file {}: {e}", cap.out_path)))?;
        Ok(TaskOutput::json(json!({ "handle": handle, "out_path": cap.out_path, "bytes": bytes })))
    }
}
