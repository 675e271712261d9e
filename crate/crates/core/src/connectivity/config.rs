//! Connector configuration file: named connector instances, each tagged
//! with its backend type.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    ConnectorError, ConnectorRegistry, LocalConfig, LocalConnector, SimConfig, SimulatedConnector, SshConfig,
    SshConnector,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ConnectorSpec {
    Local(LocalConfig),
    Ssh(SshConfig),
    Simulated(SimConfig),
}

impl ConnectorSpec {
    pub fn name(&self) -> &str {
        match self {
            ConnectorSpec::Local(c) => &c.name,
            ConnectorSpec::Ssh(c) => &c.name,
            ConnectorSpec::Simulated(c) => &c.name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectorsFile {
    pub connectors: Vec<ConnectorSpec>,
}

impl ConnectorsFile {
    pub fn parse(text: &str) -> Result<Self, ConnectorError> {
        serde_yaml::from_str(text).map_err(|e| ConnectorError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConnectorError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConnectorError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Instantiates every configured connector. Names must be unique.
pub fn build_connectors(file: &ConnectorsFile) -> Result<ConnectorRegistry, ConnectorError> {
    let mut registry = ConnectorRegistry::new();
    for spec in &file.connectors {
        if registry.get(spec.name()).is_some() {
            return Err(ConnectorError::Config(format!("duplicate connector name `{}`", spec.name())));
        }
        registry.register(match spec {
            ConnectorSpec::Local(c) => Arc::new(LocalConnector::new(c.clone())),
            ConnectorSpec::Ssh(c) => Arc::new(SshConnector::new(c.clone())),
            ConnectorSpec::Simulated(c) => Arc::new(SimulatedConnector::new(c.clone())),
        });
    }
    Ok(registry)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FILE: &str = r#"
connectors:
  - type: simulated
    name: sim
    seed: 7
    groups:
      - count: 2
        attributes: { location: campus }
    faults:
      silent_nodes: [sim-001]
  - type: local
    work_dir: /tmp/expforge-local
  - type: ssh
    name: lab
    hosts:
      - { node_id: pi-1, host: 192.168.1.10, user: pi }
"#;

    #[tokio::test]
    async fn builds_every_backend() {
        let file = ConnectorsFile::parse(FILE).unwrap();
        let reg = build_connectors(&file).unwrap();
        let names: Vec<_> = reg.iter().map(|c| c.name().to_string()).collect();
        assert_eq!(names, ["sim", "local", "lab"]);
        assert_eq!(reg.pool().await.unwrap().len(), 4);
    }

    #[test]
    fn rejects_duplicates_and_unknown_types() {
        let dup = "connectors:\n  - {type: local, work_dir: /a}\n  - {type: local, work_dir: /b}\n";
        assert!(build_connectors(&ConnectorsFile::parse(dup).unwrap()).is_err());
        assert!(ConnectorsFile::parse("connectors:\n  - {type: docker, name: d}\n").is_err());
    }
}
