//! Task registry: which implementation serves a task type on each node kind.
//!
//! The registry is data, loaded from a YAML manifest. Third parties extend it
//! by adding entries here and registering a matching
//! [`TaskImplementation`](super::TaskImplementation) in the executor catalog.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EnvironmentRequirement, NodeKind};

const BUILTIN_MANIFEST: &str = include_str!("builtin_registry.yaml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImplementationEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "EnvironmentRequirement::is_empty")]
    pub environment: EnvironmentRequirement,
    /// Cleanup command templates; `{param}` is replaced by the task parameter.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cleanup: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskTypeEntry {
    #[serde(default)]
    pub description: String,
    pub implementations: BTreeMap<NodeKind, ImplementationEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRegistry {
    /// Kinds to try, in order, when a task type has no exact implementation
    /// for a node's kind.
    #[serde(default)]
    pub fallbacks: BTreeMap<NodeKind, Vec<NodeKind>>,
    /// Commands run on every prepared node of a kind at experiment cleanup.
    #[serde(default)]
    pub node_cleanup: BTreeMap<NodeKind, Vec<String>>,
    pub tasks: BTreeMap<String, TaskTypeEntry>,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("registry manifest: {0}")]
    Parse(#[from] serde_yaml::Error),
    #[error("registry is empty")]
    Empty,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("task type `{task_type}` has no implementation for node kind {kind}")]
pub struct UnsupportedTaskForKind {
    pub task_type: String,
    pub kind: NodeKind,
}

impl TaskRegistry {
    pub fn builtin() -> Self {
        Self::from_yaml(BUILTIN_MANIFEST).expect("builtin registry manifest is valid")
    }

    pub fn from_yaml(text: &str) -> Result<Self, RegistryError> {
        let reg: TaskRegistry = serde_yaml::from_str(text)?;
        if reg.tasks.is_empty() {
            return Err(RegistryError::Empty);
        }
        Ok(reg)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("registry serializes")
    }

    /// Adds or replaces entries from another registry.
    pub fn extend(&mut self, other: TaskRegistry) {
        for (kind, chain) in other.fallbacks {
            self.fallbacks.insert(kind, chain);
        }
        for (kind, cmds) in other.node_cleanup {
            self.node_cleanup.insert(kind, cmds);
        }
        for (ty, entry) in other.tasks {
            let slot = self.tasks.entry(ty).or_default();
            if !entry.description.is_empty() {
                slot.description = entry.description;
            }
            slot.implementations.extend(entry.implementations);
        }
    }

    pub fn knows(&self, task_type: &str) -> bool {
        self.tasks.get(task_type).is_some_and(|e| !e.implementations.is_empty())
    }

    /// Preferred implementation: exact kind match first, then the kind's
    /// fallback chain in declared order.
    pub fn resolve(&self, task_type: &str, kind: NodeKind) -> Result<&ImplementationEntry, UnsupportedTaskForKind> {
        let unsupported = || UnsupportedTaskForKind { task_type: task_type.to_string(), kind };
        let entry = self.tasks.get(task_type).ok_or_else(unsupported)?;
        std::iter::once(kind)
            .chain(self.fallbacks.get(&kind).into_iter().flatten().copied())
            .find_map(|k| entry.implementations.get(&k))
            .ok_or_else(unsupported)
    }
}

/// Free-function form of [`TaskRegistry::resolve`] returning the id.
pub fn resolve_implementation(
    task_type: &str,
    kind: NodeKind,
    registry: &TaskRegistry,
) -> Result<String, UnsupportedTaskForKind> {
    registry.resolve(task_type, kind).map(|e| e.id.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_lookups() {
        let reg = TaskRegistry::builtin();
        assert_eq!(resolve_implementation("sleep", NodeKind::Simulated, &reg).unwrap(), "builtin.sleep");
        assert_eq!(resolve_implementation("shell", NodeKind::SshHost, &reg).unwrap(), "builtin.shell.ssh");
        assert_eq!(resolve_implementation("pcap-capture", NodeKind::Simulated, &reg).unwrap(), "builtin.capture.stub");
        // ssh-host inherits linux-shell implementations through the fallback chain
        assert_eq!(resolve_implementation("ping", NodeKind::SshHost, &reg).unwrap(), "builtin.ping.icmp");
    }

    #[test]
    fn unknown_and_unsupported() {
        let reg = TaskRegistry::builtin();
        assert_eq!(
            resolve_implementation("patator", NodeKind::Simulated, &reg),
            Err(UnsupportedTaskForKind { task_type: "patator".into(), kind: NodeKind::Simulated })
        );
        let only_sim: TaskRegistry = TaskRegistry::from_yaml(
            "tasks:\n  video:\n    implementations:\n      simulated: { id: x.video }\n",
        )
        .unwrap();
        assert!(only_sim.resolve("video", NodeKind::LinuxShell).is_err());
        assert!(only_sim.resolve("video", NodeKind::Simulated).is_ok());
    }

    #[test]
    fn every_builtin_covers_simulated_and_linux_shell() {
        let reg = TaskRegistry::builtin();
        for (ty, entry) in &reg.tasks {
            assert!(entry.implementations.contains_key(&NodeKind::Simulated), "{ty} lacks simulated");
            assert!(entry.implementations.contains_key(&NodeKind::LinuxShell), "{ty} lacks linux-shell");
        }
    }

    #[test]
    fn manifest_round_trip_and_extension() {
        let reg = TaskRegistry::builtin();
        assert_eq!(TaskRegistry::from_yaml(&reg.to_yaml()).unwrap(), reg);
        let mut ext = reg.clone();
        ext.extend(
            TaskRegistry::from_yaml("tasks:\n  video:\n    implementations:\n      simulated: { id: x.video }\n")
                .unwrap(),
        );
        assert!(ext.knows("video"));
        assert!(ext.knows("sleep"));
        assert!(matches!(TaskRegistry::from_yaml("tasks: {}\n"), Err(RegistryError::Empty)));
    }
}
