//! Declarative experiment manifest (YAML).
//!
//! ```yaml
//! name: https-bruteforce
//! policies: { deploy_strictness: best-effort, experiment_timeout_s: 600 }
//! nodes:
//!   server: { filter: { location: azure }, take: 1, strict: true }
//!   attackers: { connector: sim, filter: { role: attacker }, take: 10 }
//! pipelines:
//!   serve:
//!     stages:
//!       - - { type: shell, name: start-server, params: { command: "true" } }
//!       - - { type: set-flag, params: { key: ready } }
//! assignments:
//!   - { pipeline: serve, nodes: [server] }
//! ```
//!
//! Selectors are resolved against a node pool at submit time; the resulting
//! experiment holds the concrete node list.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    EnvironmentRequirement, Experiment, ModelError, NodeDescriptor, NodePool, Params, Pipeline, Policies, PoolError,
    TaskSpec, DEFAULT_TASK_TIMEOUT_S,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifestError {
    #[error("empty manifest")]
    Empty,
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{0}")]
    Malformed(String),
    #[error("assignment {index} references unknown pipeline `{pipeline}`")]
    UnknownPipeline { index: usize, pipeline: String },
    #[error("assignment {index} references unknown node selector `{selector}`")]
    UnknownSelector { index: usize, selector: String },
    #[error("selector `{selector}`: {reason}")]
    Selector { selector: String, reason: String },
    #[error("pipeline `{pipeline}`: {source}")]
    Pipeline { pipeline: String, source: ModelError },
    #[error("{0}")]
    Model(#[from] ModelError),
}

fn default_timeout() -> f64 {
    DEFAULT_TASK_TIMEOUT_S
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestTask {
    #[serde(rename = "type")]
    pub task_type: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: Params,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default, skip_serializing_if = "EnvironmentRequirement::is_empty")]
    pub environment: EnvironmentRequirement,
}

impl From<&TaskSpec> for ManifestTask {
    fn from(t: &TaskSpec) -> Self {
        Self {
            task_type: t.task_type.clone(),
            name: t.name.clone(),
            params: t.params.clone(),
            timeout_s: t.timeout_s,
            environment: t.environment.clone(),
        }
    }
}

impl ManifestTask {
    fn to_spec(&self) -> TaskSpec {
        TaskSpec {
            task_type: self.task_type.clone(),
            name: self.name.clone(),
            params: self.params.clone(),
            timeout_s: self.timeout_s,
            environment: self.environment.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestPipeline {
    #[serde(default, skip_serializing_if = "is_false")]
    pub early_stop: bool,
    pub stages: Vec<Vec<ManifestTask>>,
}

impl ManifestPipeline {
    pub fn build(&self, pipeline_id: &str) -> Result<Pipeline, ManifestError> {
        let wrap = |source| ManifestError::Pipeline { pipeline: pipeline_id.to_string(), source };
        let mut p = Pipeline::new(pipeline_id).with_early_stop(self.early_stop);
        for stage in &self.stages {
            p = p.then(stage.iter().map(ManifestTask::to_spec)).map_err(wrap)?;
        }
        Ok(p)
    }
}

impl From<&Pipeline> for ManifestPipeline {
    fn from(p: &Pipeline) -> Self {
        Self {
            early_stop: p.early_stop,
            stages: p.stages.iter().map(|s| s.tasks.iter().map(ManifestTask::from).collect()).collect(),
        }
    }
}

/// Picks nodes from a pool: connector, then attribute filters, then
/// explicit ids, then `take`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSelector {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connector: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub filter: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub take: Option<usize>,
    /// Fewer nodes than `take`, or none at all, is an error.
    #[serde(default, skip_serializing_if = "is_false")]
    pub strict: bool,
}

impl NodeSelector {
    pub fn select(&self, pool: &NodePool) -> Result<Vec<NodeDescriptor>, String> {
        let mut current: NodePool = match &self.connector {
            Some(c) => pool.nodes().iter().filter(|n| &n.connector_ref == c).cloned().collect(),
            None => pool.clone(),
        };
        for (k, v) in &self.filter {
            current = current.filter(k, v);
        }
        if !self.ids.is_empty() {
            let mut picked = Vec::with_capacity(self.ids.len());
            for id in &self.ids {
                picked.push(current.get(id).cloned().ok_or_else(|| format!("node `{id}` is not in the pool"))?);
            }
            current = picked.into_iter().collect();
        }
        let nodes = match (self.take, self.strict) {
            (Some(n), true) => current.take_strict(n).map_err(|e: PoolError| e.to_string())?,
            (Some(n), false) => current.take(n),
            (None, _) => current.into_nodes(),
        };
        if self.strict && nodes.is_empty() {
            return Err("no node matches".into());
        }
        Ok(nodes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestAssignment {
    pub pipeline: String,
    pub nodes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    /// Becomes the experiment id.
    pub name: String,
    #[serde(default)]
    pub policies: Policies,
    #[serde(default)]
    pub nodes: BTreeMap<String, NodeSelector>,
    pub pipelines: BTreeMap<String, ManifestPipeline>,
    pub assignments: Vec<ManifestAssignment>,
}

impl ExperimentManifest {
    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        if text.lines().all(|l| {
            let l = l.trim();
            l.is_empty() || l.starts_with('#') || l == "---"
        }) {
            return Err(ManifestError::Empty);
        }
        serde_yaml::from_str(text).map_err(|e| match e.location() {
            Some(loc) => ManifestError::Syntax { line: loc.line(), column: loc.column(), message: e.to_string() },
            None => ManifestError::Malformed(e.to_string()),
        })
    }

    pub fn render(&self) -> String {
        serde_yaml::to_string(self).expect("manifest serializes")
    }

    /// Builds the experiment, resolving every selector against `pool`.
    /// Assignments whose selectors all come back empty are dropped.
    pub fn resolve(&self, pool: &NodePool) -> Result<Experiment, ManifestError> {
        let mut exp = Experiment::new(&self.name).with_policies(self.policies.clone());
        let mut built: BTreeMap<&str, Pipeline> = BTreeMap::new();
        for (index, a) in self.assignments.iter().enumerate() {
            let spec = self
                .pipelines
                .get(&a.pipeline)
                .ok_or_else(|| ManifestError::UnknownPipeline { index, pipeline: a.pipeline.clone() })?;
            if !built.contains_key(a.pipeline.as_str()) {
                built.insert(a.pipeline.as_str(), spec.build(&a.pipeline)?);
            }
            let mut nodes = Vec::new();
            for sel_name in &a.nodes {
                let sel = self
                    .nodes
                    .get(sel_name)
                    .ok_or_else(|| ManifestError::UnknownSelector { index, selector: sel_name.clone() })?;
                nodes.extend(
                    sel.select(pool).map_err(|reason| ManifestError::Selector { selector: sel_name.clone(), reason })?,
                );
            }
            if nodes.is_empty() {
                continue;
            }
            exp = exp.map(&built[a.pipeline.as_str()], &nodes)?;
        }
        Ok(exp)
    }

    /// Manifest that resolves back to `exp` against a pool holding its
    /// nodes. Each assignment gets one selector listing explicit ids.
    pub fn from_experiment(exp: &Experiment) -> Self {
        let mut nodes = BTreeMap::new();
        let mut pipelines = BTreeMap::new();
        let mut assignments = Vec::new();
        for (i, a) in exp.assignments.iter().enumerate() {
            let sel = format!("a{i}");
            nodes.insert(
                sel.clone(),
                NodeSelector { ids: a.nodes.iter().map(|n| n.node_id.clone()).collect(), strict: true, ..Default::default() },
            );
            pipelines.entry(a.pipeline.pipeline_id.clone()).or_insert_with(|| ManifestPipeline::from(&a.pipeline));
            assignments.push(ManifestAssignment { pipeline: a.pipeline.pipeline_id.clone(), nodes: vec![sel] });
        }
        Self { name: exp.experiment_id.clone(), policies: exp.policies.clone(), nodes, pipelines, assignments }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NodeKind;

    fn pool() -> NodePool {
        NodePool::new(
            (0..6)
                .map(|i| {
                    NodeDescriptor::new(format!("n{i}"), NodeKind::Simulated, if i < 4 { "sim" } else { "other" })
                        .with_attribute("location", if i % 2 == 0 { "campus" } else { "aws" })
                })
                .collect(),
        )
        .unwrap()
    }

    const DOC: &str = r#"
name: demo
nodes:
  campus: { filter: { location: campus }, take: 2 }
  aws: { connector: sim, filter: { location: aws } }
pipelines:
  p:
    early_stop: true
    stages:
      - - { type: sleep, params: { seconds: 1 } }
        - { type: sleep, params: { seconds: 2 } }
      - - { type: shell, name: say, params: { command: echo hi }, timeout_s: 5 }
assignments:
  - { pipeline: p, nodes: [campus, aws] }
"#;

    #[test]
    fn resolves_selectors_in_order() {
        let m = ExperimentManifest::parse(DOC).unwrap();
        let exp = m.resolve(&pool()).unwrap();
        assert_eq!(exp.experiment_id, "demo");
        let ids: Vec<_> = exp.nodes().map(|n| n.node_id.as_str()).collect();
        assert_eq!(ids, ["n0", "n2", "n1", "n3"]);
        let p = &exp.assignments[0].pipeline;
        assert!(p.early_stop);
        let names: Vec<_> = p.task_names().collect();
        assert_eq!(names, ["sleep", "sleep-2", "say"]);
        assert_eq!(p.stages[1].tasks[0].timeout_s, 5.0);
    }

    #[test]
    fn syntax_errors_carry_position() {
        match ExperimentManifest::parse("name: x\npipelines: [\n") {
            Err(ManifestError::Syntax { line, .. }) => assert!(line >= 2),
            other => panic!("{other:?}"),
        }
        match ExperimentManifest::parse("name: x\nbogus: 1\npipelines: {}\nassignments: []\n") {
            Err(ManifestError::Syntax { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("bogus"));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(ExperimentManifest::parse("  \n# nothing\n"), Err(ManifestError::Empty));
    }

    #[test]
    fn strict_selectors_fail_short() {
        let mut m = ExperimentManifest::parse(DOC).unwrap();
        m.nodes.get_mut("campus").unwrap().take = Some(5);
        assert!(m.resolve(&pool()).unwrap().nodes().count() == 5);
        m.nodes.get_mut("campus").unwrap().strict = true;
        assert!(matches!(m.resolve(&pool()), Err(ManifestError::Selector { .. })));
        m.nodes.get_mut("campus").unwrap().filter.insert("location".into(), "mars".into());
        m.nodes.get_mut("campus").unwrap().take = None;
        assert!(matches!(m.resolve(&pool()), Err(ManifestError::Selector { .. })));
    }

    #[test]
    fn unknown_references() {
        let mut m = ExperimentManifest::parse(DOC).unwrap();
        m.assignments[0].nodes.push("nope".into());
        assert!(matches!(m.resolve(&pool()), Err(ManifestError::UnknownSelector { .. })));
        m.assignments[0].pipeline = "q".into();
        assert!(matches!(m.resolve(&pool()), Err(ManifestError::UnknownPipeline { .. })));
    }

    #[test]
    fn overlapping_selectors_are_rejected() {
        let mut m = ExperimentManifest::parse(DOC).unwrap();
        m.assignments.push(ManifestAssignment { pipeline: "p".into(), nodes: vec!["campus".into()] });
        assert!(matches!(m.resolve(&pool()), Err(ManifestError::Model(ModelError::NodeAlreadyAssigned(_)))));
    }

    #[test]
    fn experiment_round_trip() {
        let exp = ExperimentManifest::parse(DOC).unwrap().resolve(&pool()).unwrap();
        let text = ExperimentManifest::from_experiment(&exp).render();
        assert_eq!(ExperimentManifest::parse(&text).unwrap().resolve(&pool()).unwrap(), exp);
    }
}
