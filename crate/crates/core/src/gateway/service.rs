use std::sync::Arc;

use async_trait::async_trait;

use super::{FlagRecord, GatewayApi, GatewayError, IngestAck, IngestOutcome};
use crate::canonical::sha256_hex;
use crate::clock::wall_now_ns;
use crate::director::{finish_check, Core, DeployState, DirectorError, ExecState};
use crate::executor::{PipelineBundle, PipelineReport};
use crate::model::ExperimentStatus;

/// Server-side gateway backed by the director's experiment records. Flag
/// and ingestion writes go through the same per-experiment writer as every
/// other state change.
#[derive(Clone)]
pub struct Gateway {
    core: Arc<Core>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Gateway")
    }
}

fn from_director(e: DirectorError, experiment_id: &str) -> GatewayError {
    match e {
        DirectorError::UnknownExperiment(_) => GatewayError::UnknownExperiment { experiment_id: experiment_id.into() },
        other => GatewayError::Internal { message: other.to_string() },
    }
}

impl Gateway {
    pub(crate) fn new(core: Arc<Core>) -> Self {
        Self { core }
    }

    pub fn artifact(&self, experiment_id: &str, node_id: &str, name: &str) -> Result<Option<Vec<u8>>, GatewayError> {
        self.core
            .store
            .get_artifact(experiment_id, node_id, name)
            .map_err(|e| GatewayError::Internal { message: e.to_string() })
    }

    async fn guarded_update<T>(
        &self,
        experiment_id: &str,
        f: impl FnOnce(&mut crate::director::ExperimentRecord) -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError> {
        let mut rejected = None;
        let res = self
            .core
            .update(experiment_id, |r| match f(r) {
                Ok(v) => Ok(v),
                Err(g) => {
                    rejected = Some(g);
                    Err(DirectorError::Store("rejected".into()))
                }
            })
            .await;
        if let Some(g) = rejected {
            return Err(g);
        }
        match res {
            Ok(v) => Ok(v),
            Err(e) => Err(from_director(e, experiment_id)),
        }
    }
}

#[async_trait]
impl GatewayApi for Gateway {
    async fn fetch_bundle(&self, experiment_id: &str, node_id: &str) -> Result<PipelineBundle, GatewayError> {
        let rec = self.core.snapshot(experiment_id).map_err(|e| from_director(e, experiment_id))?;
        let unknown = || GatewayError::UnknownAssignment {
            experiment_id: experiment_id.into(),
            node_id: node_id.into(),
        };
        let node = rec.nodes.get(node_id).ok_or_else(unknown)?;
        if rec.status != ExperimentStatus::Running {
            return Err(GatewayError::WrongPhase { status: rec.status });
        }
        if node.deployment != DeployState::Prepared {
            return Err(unknown());
        }
        rec.plan
            .as_ref()
            .and_then(|p| p.node_bundles.get(node_id))
            .map(|b| b.bundle.clone())
            .ok_or_else(unknown)
    }

    async fn ingest_report(&self, report: &PipelineReport) -> Result<IngestAck, GatewayError> {
        let exp = report.experiment_id.clone();
        let node_id = report.node_id.clone();
        self.guarded_update(&exp, |r| {
            let unknown = || {
                GatewayError::UnknownAssignment { experiment_id: exp.clone(), node_id: node_id.clone() }
            };
            let expected = r
                .plan
                .as_ref()
                .and_then(|p| p.node_bundles.get(&node_id))
                .map(|b| b.bundle.digest.clone())
                .ok_or_else(unknown)?;
            if !matches!(
                r.status,
                ExperimentStatus::Running | ExperimentStatus::Finished | ExperimentStatus::Failed | ExperimentStatus::Cancelled
            ) {
                return Err(GatewayError::WrongPhase { status: r.status });
            }
            if r.reports.contains_key(&node_id) {
                return Ok(IngestAck { outcome: IngestOutcome::Duplicate, late: false });
            }
            if report.bundle_digest != expected {
                return Err(GatewayError::BundleMismatch);
            }
            let node = r.nodes.get_mut(&node_id).ok_or_else(unknown)?;
            let late = matches!(node.execution, ExecState::TimedOut | ExecState::Unreachable);
            node.execution = ExecState::Reported;
            node.late = late;
            r.store_report(report, late);
            finish_check(r);
            Ok(IngestAck { outcome: IngestOutcome::Accepted, late })
        })
        .await
    }

    async fn set_flag(&self, experiment_id: &str, key: &str, node_id: &str) -> Result<FlagRecord, GatewayError> {
        if key.is_empty() {
            return Err(GatewayError::InvalidRequest { message: "flag key must be non-empty".into() });
        }
        self.guarded_update(experiment_id, |r| {
            if r.status != ExperimentStatus::Running {
                return Err(GatewayError::WrongPhase { status: r.status });
            }
            Ok(r.flags
                .entry(key.to_string())
                .or_insert_with(|| FlagRecord { key: key.to_string(), set_at_ns: wall_now_ns(), setter: node_id.to_string() })
                .clone())
        })
        .await
    }

    async fn get_flag(&self, experiment_id: &str, key: &str) -> Result<Option<FlagRecord>, GatewayError> {
        let rec = self.core.snapshot(experiment_id).map_err(|e| from_director(e, experiment_id))?;
        Ok(rec.flags.get(key).cloned())
    }

    async fn put_artifact(
        &self,
        experiment_id: &str,
        node_id: &str,
        name: &str,
        bytes: Vec<u8>,
    ) -> Result<String, GatewayError> {
        if !crate::model::valid_identifier(name) {
            return Err(GatewayError::InvalidRequest { message: format!("invalid artifact name `{name}`") });
        }
        let rec = self.core.snapshot(experiment_id).map_err(|e| from_director(e, experiment_id))?;
        if !rec.nodes.contains_key(node_id) {
            return Err(GatewayError::UnknownAssignment { experiment_id: experiment_id.into(), node_id: node_id.into() });
        }
        self.core
            .store
            .put_artifact(experiment_id, node_id, name, &bytes)
            .map_err(|e| GatewayError::Internal { message: e.to_string() })?;
        Ok(sha256_hex(&bytes))
    }
}
