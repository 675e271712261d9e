use std::path::Path;
use std::time::Duration;

use async_trait::async_trait;
use serde_json::json;

use super::{f64_param, i64_param, opt_str_param, str_param, TaskFailure, TaskImplementation, TaskOutput};
use crate::canonical::sha256_hex;
use crate::executor::TaskContext;
use crate::gateway::{wait_for_flag, FlagWait};
use crate::model::Params;

pub struct Sleep;

#[async_trait]
impl TaskImplementation for Sleep {
    fn id(&self) -> &str {
        "builtin.sleep"
    }

    async fn run(&self, params: &Params, _ctx: &TaskContext) -> Result<TaskOutput, TaskFailure> {
        let secs = f64_param(params, "seconds", None)?;
        if secs < 0.0 {
            return Err(TaskFailure::new(format!("seconds must be >= 0, got {secs}")));
        }
        tokio::time::sleep(Duration::from_secs_f64(secs)).await;
        Ok(TaskOutput::empty())
    }
}

pub struct SetFlag;

#[async_trait]
impl TaskImplementation for SetFlag {
    fn id(&self) -> &str {
        "builtin.flag.set"
    }

    async fn run(&self, params: &Params, ctx: &TaskContext) -> Result<TaskOutput, TaskFailure> {
        let key = str_param(params, "key")?;
        let rec = ctx
            .gateway
            .set_flag(&ctx.experiment_id, key, &ctx.node_id)
            .await
            .map_err(|e| TaskFailure::new(format!("set flag `{key}`: {e}")))?;
        Ok(TaskOutput::json(serde_json::to_value(rec).expect("flag record serializes")))
    }
}

pub struct WaitFlag;

pub(crate) const DEFAULT_WAIT_FLAG_TIMEOUT_S: f64 = 60.0;

#[async_trait]
impl TaskImplementation for WaitFlag {
    fn id(&self) -> &str {
        "builtin.flag.wait"
    }

    async fn run(&self, params: &Params, ctx: &TaskContext) -> Result<TaskOutput, TaskFailure> {
        let key = str_param(params, "key")?;
        let timeout = f64_param(params, "timeout_s", Some(DEFAULT_WAIT_FLAG_TIMEOUT_S))?;
        if timeout < 0.0 {
            return Err(TaskFailure::new("timeout_s must be >= 0"));
        }
        let poll = Duration::from_millis(ctx.settings.flag_poll_interval_ms.max(1));
        match wait_for_flag(ctx.gateway.as_ref(), &ctx.experiment_id, key, Duration::from_secs_f64(timeout), poll).await
        {
            Ok(FlagWait::Set(rec)) => Ok(TaskOutput::json(serde_json::to_value(rec).expect("flag record serializes"))),
            Ok(FlagWait::TimedOut) => Err(TaskFailure::new(format!("flag `{key}` not set within {timeout} s"))),
            Err(e) => Err(TaskFailure::new(format!("wait for flag `{key}`: {e}"))),
        }
    }
}

fn port_params(params: &Params) -> Result<(String, u16, f64), TaskFailure> {
    let host = str_param(params, "host")?.to_string();
    let port = i64_param(params, "port", None)?;
    if !(1..=65535).contains(&port) {
        return Err(TaskFailure::new(format!("port must be in 1..=65535, got {port}")));
    }
    let timeout = f64_param(params, "timeout_s", Some(3.0))?;
    Ok((host, port as u16, timeout))
}

pub struct TcpPortCheck;

#[async_trait]
impl TaskImplementation for TcpPortCheck {
    fn id(&self) -> &str {
        "builtin.port-check.tcp"
    }

    async fn run(&self, params: &Params, _ctx: &TaskContext) -> Result<TaskOutput, TaskFailure> {
        let (host, port, timeout) = port_params(params)?;
        let addrs: Vec<_> = tokio::net::lookup_host((host.as_str(), port))
            .await
            .map_err(|e| TaskFailure::new(format!("cannot resolve `{host}`: {e}")))?
            .collect();
        if addrs.is_empty() {
            return Err(TaskFailure::new(format!("cannot resolve `{host}`")));
        }
        let mut detail = String::new();
        let mut open = false;
        for addr in &addrs {
            match tokio::time::timeout(Duration::from_secs_f64(timeout), tokio::net::TcpStream::connect(addr)).await {
                Ok(Ok(_)) => {
                    open = true;
                    break;
                }
                Ok(Err(e)) => detail = e.to_string(),
                Err(_) => detail = format!("no answer within {timeout} s"),
            }
        }
        let mut v = json!({ "host": host, "port": port, "open": open });
        if !open {
            v["detail"] = json!(detail);
        }
        Ok(TaskOutput::json(v))
    }
}

pub struct SimulatedPortCheck;

#[async_trait]
impl TaskImplementation for SimulatedPortCheck {
    fn id(&self) -> &str {
        "builtin.port-check.sim"
    }

    async fn run(&self, params: &Params, _ctx: &TaskContext) -> Result<TaskOutput, TaskFailure> {
        let (host, port, _) = port_params(params)?;
        Ok(TaskOutput::json(json!({ "host": host, "port": port, "open": true, "simulated": true })))
    }
}

pub struct Upload;

fn upload_paths(params: &Params) -> Result<Vec<String>, TaskFailure> {
    let v = match params.get("paths") {
        None => return Ok(Vec::new()),
        Some(v) => v,
    };
    if let Some(s) = v.as_str() {
        return Ok(vec![s.to_string()]);
    }
    let list = v.as_list().ok_or_else(|| TaskFailure::new("parameter `paths` must be a list of strings"))?;
    list.iter()
        .map(|p| p.as_str().map(str::to_string).ok_or_else(|| TaskFailure::new("parameter `paths` must be a list of strings")))
        .collect()
}

fn read_file(ctx: &TaskContext, path: &str) -> std::io::Result<Vec<u8>> {
    if Path::new(path).is_absolute() && ctx.scratch.root().is_some() {
        std::fs::read(path)
    } else {
        ctx.scratch.read(path)
    }
}

#[async_trait]
impl TaskImplementation for Upload {
    fn id(&self) -> &str {
        "builtin.upload"
    }

    async fn run(&self, params: &Params, ctx: &TaskContext) -> Result<TaskOutput, TaskFailure> {
        let paths = upload_paths(params)?;
        let destination = opt_str_param(params, "destination")?.unwrap_or("gateway");

        let mut files = Vec::with_capacity(paths.len());
        let mut missing = Vec::new();
        for p in &paths {
            match read_file(ctx, p) {
                Ok(bytes) => files.push((p.clone(), bytes)),
                Err(_) => missing.push(p.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(TaskFailure::new(format!("missing files: {}", missing.join(", "))));
        }

        let mut uploaded = Vec::new();
        for (path, bytes) in files {
            let name = Path::new(&path).file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or(path.clone());
            let size = bytes.len();
            let local_digest = sha256_hex(&bytes);
            let digest = if destination == "gateway" {
                ctx.gateway
                    .put_artifact(&ctx.experiment_id, &ctx.node_id, &name, bytes)
                    .await
                    .map_err(|e| TaskFailure::new(format!("upload `{path}`: {e}")))?
            } else if destination.starts_with("http://") || destination.starts_with("https://") {
                let url = format!("{}/{}", destination.trim_end_matches('/'), name);
                let resp = reqwest::Client::new()
                    .put(&url)
                    .body(bytes)
                    .send()
                    .await
                    .map_err(|e| TaskFailure::new(format!("upload `{path}` to {url}: {e}")))?;
                if !resp.status().is_success() {
                    return Err(TaskFailure::new(format!("upload `{path}` to {url}: HTTP {}", resp.status())));
                }
                local_digest.clone()
            } else {
                return Err(TaskFailure::new(format!("unsupported destination `{destination}`")));
            };
            if digest != local_digest {
                return Err(TaskFailure::new(format!("upload `{path}`: digest mismatch")));
            }
            uploaded.push(json!({ "path": path, "name": name, "bytes": size, "sha256": digest }));
        }
        Ok(TaskOutput::json(json!({ "destination": destination, "files": uploaded })))
    }
}
