//! Builtin task library and the implementation catalog the executor
//! dispatches through.

mod builtin;
mod capture;
mod ping;
pub mod registry;
mod shell;
pub(crate) mod simcmd;

use std::collections::BTreeMap;
use std::sync::Arc;

use async_trait::async_trait;

use crate::executor::TaskContext;
use crate::model::{ParamValue, Params, Payload};

pub use registry::{resolve_implementation, TaskRegistry, UnsupportedTaskForKind};
pub use simcmd::{SimCommandOutcome, SimShell};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskOutput {
    pub payload: Option<Payload>,
}

impl TaskOutput {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn text(s: impl Into<String>) -> Self {
        Self { payload: Some(Payload::Text(s.into())) }
    }

    pub fn json(v: serde_json::Value) -> Self {
        Self { payload: Some(Payload::Json(v)) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskFailure {
    pub message: String,
    pub payload: Option<Payload>,
}

impl TaskFailure {
    pub fn new(message: impl Into<String>) -> Self {
        Self { message: message.into(), payload: None }
    }

    pub fn with_payload(mut self, payload: Payload) -> Self {
        self.payload = Some(payload);
        self
    }
}

/// Target-specific run method for one task type. Implementations must be
/// reentrant: one stage may run the same implementation several times
/// concurrently.
#[async_trait]
pub trait TaskImplementation: Send + Sync {
    fn id(&self) -> &str;

    async fn run(&self, params: &Params, ctx: &TaskContext) -> Result<TaskOutput, TaskFailure>;
}

/// Implementation id -> implementation.
#[derive(Clone, Default)]
pub struct ImplementationCatalog {
    entries: BTreeMap<String, Arc<dyn TaskImplementation>>,
}

impl ImplementationCatalog {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut c = Self::empty();
        c.register(Arc::new(builtin::Sleep));
        c.register(Arc::new(shell::ProcessShell::new("builtin.shell.process")));
        c.register(Arc::new(shell::ProcessShell::new("builtin.shell.ssh")));
        c.register(Arc::new(shell::SimulatedShell));
        c.register(Arc::new(builtin::SetFlag));
        c.register(Arc::new(builtin::WaitFlag));
        c.register(Arc::new(capture::TcpdumpCapture));
        c.register(Arc::new(capture::StubCapture));
        c.register(Arc::new(capture::StopCapture));
        c.register(Arc::new(ping::IcmpPing));
        c.register(Arc::new(ping::SimulatedPing));
        c.register(Arc::new(builtin::TcpPortCheck));
        c.register(Arc::new(builtin::SimulatedPortCheck));
        c.register(Arc::new(builtin::Upload));
        c
    }

    pub fn register(&mut self, imp: Arc<dyn TaskImplementation>) {
        self.entries.insert(imp.id().to_string(), imp);
    }

    pub fn get(&self, id: &str) -> Option<&Arc<dyn TaskImplementation>> {
        self.entries.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

impl std::fmt::Debug for ImplementationCatalog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

// Parameter accessors shared by the builtin tasks.

pub(crate) fn param<'a>(params: &'a Params, key: &str) -> Result<&'a ParamValue, TaskFailure> {
    params.get(key).ok_or_else(|| TaskFailure::new(format!("missing parameter `{key}`")))
}

pub(crate) fn str_param<'a>(params: &'a Params, key: &str) -> Result<&'a str, TaskFailure> {
    param(params, key)?
        .as_str()
        .ok_or_else(|| TaskFailure::new(format!("parameter `{key}` must be a string")))
}

pub(crate) fn opt_str_param<'a>(params: &'a Params, key: &str) -> Result<Option<&'a str>, TaskFailure> {
    match params.get(key) {
        None => Ok(None),
        Some(v) => v.as_str().map(Some).ok_or_else(|| TaskFailure::new(format!("parameter `{key}` must be a string"))),
    }
}

pub(crate) fn f64_param(params: &Params, key: &str, default: Option<f64>) -> Result<f64, TaskFailure> {
    match (params.get(key), default) {
        (None, Some(d)) => Ok(d),
        (None, None) => Err(TaskFailure::new(format!("missing parameter `{key}`"))),
        (Some(v), _) => v
            .as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| TaskFailure::new(format!("parameter `{key}` must be a number"))),
    }
}

pub(crate) fn i64_param(params: &Params, key: &str, default: Option<i64>) -> Result<i64, TaskFailure> {
    match (params.get(key), default) {
        (None, Some(d)) => Ok(d),
        (None, None) => Err(TaskFailure::new(format!("missing parameter `{key}`"))),
        (Some(v), _) => v.as_i64().ok_or_else(|| TaskFailure::new(format!("parameter `{key}` must be an integer"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_catalog_covers_builtin_registry() {
        let cat = ImplementationCatalog::builtin();
        let reg = TaskRegistry::builtin();
        for (ty, entry) in &reg.tasks {
            for imp in entry.implementations.values() {
                assert!(cat.get(&imp.id).is_some(), "{ty}: {} not in catalog", imp.id);
            }
        }
    }
}
