use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Execution environment family of a node. Selects which task
/// implementations are eligible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    LinuxShell,
    SshHost,
    Simulated,
}

impl NodeKind {
    pub const ALL: [NodeKind; 3] = [NodeKind::LinuxShell, NodeKind::SshHost, NodeKind::Simulated];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::LinuxShell => "linux-shell",
            NodeKind::SshHost => "ssh-host",
            NodeKind::Simulated => "simulated",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown node kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeDescriptor {
    pub node_id: String,
    pub kind: NodeKind,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    /// Name of the connector instance that owns this node.
    pub connector_ref: String,
}

impl NodeDescriptor {
    pub fn new(node_id: impl Into<String>, kind: NodeKind, connector_ref: impl Into<String>) -> Self {
        Self {
            node_id: node_id.into(),
            kind,
            attributes: BTreeMap::new(),
            connector_ref: connector_ref.into(),
        }
    }

    pub fn with_attribute(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.insert(key.into(), value.into());
        self
    }

    pub fn attribute(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).map(String::as_str)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PoolError {
    #[error("duplicate node id `{0}` in pool")]
    DuplicateNodeId(String),
    #[error("requested {requested} nodes but only {available} match")]
    InsufficientNodes { requested: usize, available: usize },
}

/// Ordered collection of nodes. Node ids are unique within a pool.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodePool {
    nodes: Vec<NodeDescriptor>,
}

impl NodePool {
    pub fn new(nodes: Vec<NodeDescriptor>) -> Result<Self, PoolError> {
        let mut seen = std::collections::HashSet::new();
        for n in &nodes {
            if !seen.insert(n.node_id.as_str()) {
                return Err(PoolError::DuplicateNodeId(n.node_id.clone()));
            }
        }
        Ok(Self { nodes })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[NodeDescriptor] {
        &self.nodes
    }

    pub fn into_nodes(self) -> Vec<NodeDescriptor> {
        self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, node_id: &str) -> Option<&NodeDescriptor> {
        self.nodes.iter().find(|n| n.node_id == node_id)
    }

    /// Nodes whose `attributes[key] == value`, in pool order. Nodes missing
    /// the key are excluded.
    pub fn filter(&self, key: &str, value: &str) -> NodePool {
        NodePool {
            nodes: self
                .nodes
                .iter()
                .filter(|n| n.attribute(key) == Some(value))
                .cloned()
                .collect(),
        }
    }

    /// At most `n` nodes from the head of the pool.
    pub fn take(&self, n: usize) -> Vec<NodeDescriptor> {
        self.nodes.iter().take(n).cloned().collect()
    }

    /// Exactly `n` nodes from the head of the pool, or `InsufficientNodes`.
    pub fn take_strict(&self, n: usize) -> Result<Vec<NodeDescriptor>, PoolError> {
        if self.nodes.len() < n {
            return Err(PoolError::InsufficientNodes { requested: n, available: self.nodes.len() });
        }
        Ok(self.take(n))
    }

    /// Concatenates pools, rejecting node id collisions.
    pub fn merge(pools: impl IntoIterator<Item = NodePool>) -> Result<NodePool, PoolError> {
        NodePool::new(pools.into_iter().flat_map(|p| p.nodes).collect())
    }
}

impl FromIterator<NodeDescriptor> for NodePool {
    /// Builds a pool without the uniqueness check; prefer [`NodePool::new`]
    /// for untrusted input.
    fn from_iter<I: IntoIterator<Item = NodeDescriptor>>(iter: I) -> Self {
        NodePool { nodes: iter.into_iter().collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool() -> NodePool {
        NodePool::new(vec![
            NodeDescriptor::new("a", NodeKind::Simulated, "sim").with_attribute("location", "azure"),
            NodeDescriptor::new("b", NodeKind::Simulated, "sim").with_attribute("location", "campus"),
            NodeDescriptor::new("c", NodeKind::Simulated, "sim").with_attribute("location", "azure"),
            NodeDescriptor::new("d", NodeKind::Simulated, "sim"),
        ])
        .unwrap()
    }

    #[test]
    fn filter_keeps_order_and_drops_missing_keys() {
        let ids: Vec<_> = pool().filter("location", "azure").nodes().iter().map(|n| n.node_id.clone()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert!(NodePool::empty().filter("location", "azure").is_empty());
    }

    #[test]
    fn take_lenient_and_strict() {
        let p = pool().filter("location", "azure");
        assert_eq!(p.take(5).len(), 2);
        assert!(p.take(0).is_empty());
        assert_eq!(
            p.take_strict(5),
            Err(PoolError::InsufficientNodes { requested: 5, available: 2 })
        );
        assert_eq!(p.take_strict(2).unwrap().len(), 2);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let n = NodeDescriptor::new("x", NodeKind::LinuxShell, "local");
        assert_eq!(NodePool::new(vec![n.clone(), n]), Err(PoolError::DuplicateNodeId("x".into())));
    }

    #[test]
    fn kind_round_trips_through_str() {
        for k in NodeKind::ALL {
            assert_eq!(k.as_str().parse::<NodeKind>().unwrap(), k);
        }
        assert!("docker".parse::<NodeKind>().is_err());
    }
}
