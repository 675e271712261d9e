//! Turns an experiment into a deployment plan.
//!
//! Setup work is computed once per distinct (pipeline digest, node kind)
//! pair; every assigned node then gets its own sealed bundle. Environment
//! requirements are merged in stage order, then task order within a stage,
//! with the implementation's requirement ahead of the task's own.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::executor::{ExecutorSettings, PipelineBundle};
use crate::model::{EnvironmentRequirement, Experiment, NodeKind, Params, Pipeline};
use crate::tasks::registry::{TaskRegistry, UnsupportedTaskForKind};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EnvironmentKey {
    pub pipeline_digest: String,
    pub node_kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagedFileSpec {
    pub path: String,
    pub content: String,
    pub digest: String,
}

/// Merged environment contents, without a key.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvironmentBody {
    pub setup_commands: Vec<String>,
    pub staged_files: Vec<StagedFileSpec>,
    pub verify_commands: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub key: EnvironmentKey,
    pub setup_commands: Vec<String>,
    pub staged_files: Vec<StagedFileSpec>,
    pub verify_commands: Vec<String>,
}

impl EnvironmentSpec {
    pub fn new(key: EnvironmentKey, body: EnvironmentBody) -> Self {
        Self {
            key,
            setup_commands: body.setup_commands,
            staged_files: body.staged_files,
            verify_commands: body.verify_commands,
        }
    }

    pub fn empty(node_kind: NodeKind) -> Self {
        Self::new(EnvironmentKey { pipeline_digest: String::new(), node_kind }, EnvironmentBody::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeBundle {
    pub pipeline_id: String,
    pub environment: EnvironmentKey,
    pub bundle: PipelineBundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    pub experiment_id: String,
    pub environment_specs: Vec<EnvironmentSpec>,
    pub node_bundles: BTreeMap<String, NodeBundle>,
    pub cleanup_commands: BTreeMap<NodeKind, Vec<String>>,
}

impl DeploymentPlan {
    pub fn environment(&self, key: &EnvironmentKey) -> Option<&EnvironmentSpec> {
        self.environment_specs.iter().find(|s| &s.key == key)
    }

    pub fn environment_for_node(&self, node_id: &str) -> Option<&EnvironmentSpec> {
        self.environment(&self.node_bundles.get(node_id)?.environment)
    }

    pub fn canonical_text(&self) -> String {
        canonical::to_canonical_string(self)
    }
}

/// Two declarations of the same logical requirement disagree.
#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[error("conflicting environment requirement `{requirement}`: `{first}` vs `{second}`")]
pub struct EnvironmentConflict {
    pub requirement: String,
    pub first: String,
    pub second: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompileError {
    #[error(transparent)]
    UnsupportedTaskForKind(#[from] UnsupportedTaskForKind),
    #[error("pipeline `{pipeline}` on {kind}: {conflict}")]
    EnvironmentConflict { pipeline: String, kind: NodeKind, conflict: EnvironmentConflict },
}

fn binary_decl(name: &str, version: &Option<String>) -> String {
    match version {
        Some(v) => format!("{name}={v}"),
        None => name.to_string(),
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Union of requirements preserving first occurrence. Identical commands
/// collapse; the same binary at two versions, or the same staged path with
/// two contents, is a conflict.
pub fn merge_environments<'a>(
    reqs: impl IntoIterator<Item = &'a EnvironmentRequirement>,
) -> Result<EnvironmentBody, EnvironmentConflict> {
    let mut setup: Vec<String> = Vec::new();
    let mut verify: Vec<String> = Vec::new();
    let mut binaries: Vec<(String, Option<String>)> = Vec::new();
    let mut files: Vec<StagedFileSpec> = Vec::new();

    fn push_unique(list: &mut Vec<String>, cmd: &str) {
        if !list.iter().any(|c| c == cmd) {
            list.push(cmd.to_string());
        }
    }

    for req in reqs {
        for cmd in &req.setup_commands {
            push_unique(&mut setup, cmd);
        }
        for cmd in &req.verify_commands {
            push_unique(&mut verify, cmd);
        }
        for bin in &req.binaries {
            match binaries.iter_mut().find(|(n, _)| *n == bin.name) {
                None => binaries.push((bin.name.clone(), bin.version.clone())),
                Some((_, existing)) => match (existing.as_ref(), bin.version.as_ref()) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(EnvironmentConflict {
                            requirement: format!("binary {}", bin.name),
                            first: binary_decl(&bin.name, existing),
                            second: binary_decl(&bin.name, &bin.version),
                        })
                    }
                    (None, Some(_)) => *existing = bin.version.clone(),
                    _ => {}
                },
            }
        }
        for f in &req.files {
            let digest = canonical::sha256_hex(f.content.as_bytes());
            match files.iter().find(|s| s.path == f.path) {
                None => files.push(StagedFileSpec { path: f.path.clone(), content: f.content.clone(), digest }),
                Some(s) if s.digest != digest => {
                    return Err(EnvironmentConflict {
                        requirement: format!("file {}", f.path),
                        first: format!("sha256:{}", s.digest),
                        second: format!("sha256:{digest}"),
                    })
                }
                Some(_) => {}
            }
        }
    }

    let mut verify_commands: Vec<String> = Vec::new();
    for (name, version) in &binaries {
        push_unique(&mut verify_commands, &format!("command -v {name} >/dev/null 2>&1"));
        if let Some(v) = version {
            push_unique(
                &mut verify_commands,
                &format!("{name} --version 2>&1 | grep -qF -- {}", shell_quote(v)),
            );
        }
    }
    for cmd in verify {
        push_unique(&mut verify_commands, &cmd);
    }

    Ok(EnvironmentBody { setup_commands: setup, staged_files: files, verify_commands })
}

/// Requirements of one pipeline on one node kind, in merge order.
pub(crate) fn pipeline_requirements<'a>(
    pipeline: &'a Pipeline,
    kind: NodeKind,
    registry: &'a TaskRegistry,
) -> Result<Vec<&'a EnvironmentRequirement>, UnsupportedTaskForKind> {
    let mut reqs = Vec::new();
    for task in pipeline.tasks() {
        let imp = registry.resolve(&task.task_type, kind)?;
        reqs.push(&imp.environment);
        reqs.push(&task.environment);
    }
    Ok(reqs)
}

fn render_template(template: &str, params: &Params) -> String {
    let mut out = template.to_string();
    for (k, v) in params {
        out = out.replace(&format!("{{{k}}}"), &v.to_string());
    }
    out
}

pub fn compile(exp: &Experiment, registry: &TaskRegistry) -> Result<DeploymentPlan, CompileError> {
    compile_with(exp, registry, &ExecutorSettings::default())
}

pub fn compile_with(
    exp: &Experiment,
    registry: &TaskRegistry,
    settings: &ExecutorSettings,
) -> Result<DeploymentPlan, CompileError> {
    let mut specs: BTreeMap<EnvironmentKey, EnvironmentSpec> = BTreeMap::new();
    let mut bundles = BTreeMap::new();
    let mut cleanup: BTreeMap<NodeKind, Vec<String>> = BTreeMap::new();
    let mut impl_tables: HashMap<EnvironmentKey, BTreeMap<String, String>> = HashMap::new();

    for (pipeline, node) in exp.placements() {
        let key = EnvironmentKey { pipeline_digest: pipeline.digest(), node_kind: node.kind };
        if !specs.contains_key(&key) {
            let reqs = pipeline_requirements(pipeline, node.kind, registry)?;
            let body = merge_environments(reqs).map_err(|conflict| CompileError::EnvironmentConflict {
                pipeline: pipeline.pipeline_id.clone(),
                kind: node.kind,
                conflict,
            })?;
            specs.insert(key.clone(), EnvironmentSpec::new(key.clone(), body));

            let mut table = BTreeMap::new();
            let kind_cleanup = cleanup.entry(node.kind).or_default();
            for task in pipeline.tasks() {
                let imp = registry.resolve(&task.task_type, node.kind)?;
                table.insert(task.name.clone(), imp.id.clone());
                for t in &imp.cleanup {
                    let cmd = render_template(t, &task.params);
                    if !kind_cleanup.contains(&cmd) {
                        kind_cleanup.push(cmd);
                    }
                }
            }
            impl_tables.insert(key.clone(), table);
        }
        let bundle = PipelineBundle {
            experiment_id: exp.experiment_id.clone(),
            node_id: node.node_id.clone(),
            node_kind: node.kind,
            pipeline: pipeline.clone(),
            implementations: impl_tables[&key].clone(),
            early_stop: pipeline.early_stop,
            settings: settings.clone(),
            digest: String::new(),
        }
        .seal();
        bundles.insert(
            node.node_id.clone(),
            NodeBundle { pipeline_id: pipeline.pipeline_id.clone(), environment: key, bundle },
        );
    }

    // Node-level scratch cleanup runs after task-specific cleanup.
    for (kind, cmds) in cleanup.iter_mut() {
        for c in registry.node_cleanup.get(kind).into_iter().flatten() {
            if !cmds.contains(c) {
                cmds.push(c.clone());
            }
        }
    }

    Ok(DeploymentPlan {
        experiment_id: exp.experiment_id.clone(),
        environment_specs: specs.into_values().collect(),
        node_bundles: bundles,
        cleanup_commands: cleanup,
    })
}
