#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use expforge::connectivity::{Connector, ConnectorRegistry, FaultModel, SimConfig, SimulatedConnector};
use expforge::director::{Director, DirectorConfig, ExperimentStore, MemoryStore, StatusView};
use expforge::executor::{ExecutorSettings, RetryPolicy};
use expforge::model::ExperimentStatus;
use expforge::tasks::TaskRegistry;

pub const LISTING1: &str = include_str!("../../fixtures/listing1.yaml");
pub const CONNECTORS: &str = include_str!("../../fixtures/connectors.yaml");

/// Director settings tuned for fast tests: short polls and retries.
pub fn fast_config() -> DirectorConfig {
    DirectorConfig {
        executor: ExecutorSettings {
            report_retry: RetryPolicy { base_delay_ms: 100, factor: 2, max_attempts: 8 },
            flag_poll_interval_ms: 20,
        },
        monitor_interval: Duration::from_millis(20),
        health_interval: Duration::from_millis(200),
        ..DirectorConfig::default()
    }
}

/// The 21-node layout behind the Listing-1 fixture.
pub fn listing1_infra(seed: u64) -> SimConfig {
    SimConfig::new("sim", seed)
        .group(1, &[("location", "azure"), ("role", "server")])
        .group(10, &[("location", "campus"), ("role", "attacker")])
        .group(10, &[("location", "campus"), ("role", "benign")])
}

pub fn sim(config: SimConfig) -> SimulatedConnector {
    SimulatedConnector::new(config)
}

pub fn uniform(n: usize, seed: u64, faults: FaultModel) -> SimulatedConnector {
    SimulatedConnector::new(SimConfig::new("sim", seed).group(n, &[("location", "campus")]).faults(faults))
}

pub async fn start(connector: Arc<dyn Connector>, store: Arc<dyn ExperimentStore>, config: DirectorConfig) -> Director {
    Director::start(config, store, ConnectorRegistry::new().with(connector), TaskRegistry::builtin())
        .await
        .expect("director starts")
}

pub async fn start_sim(connector: &SimulatedConnector) -> Director {
    start(Arc::new(connector.clone()), Arc::new(MemoryStore::new()), fast_config()).await
}

pub async fn wait_status(d: &Director, id: &str, want: impl Fn(ExperimentStatus) -> bool, secs: u64) -> StatusView {
    let v = d.wait_for(id, Duration::from_secs(secs), want).await.expect("status");
    v
}

pub async fn deploy_ready(d: &Director, id: &str) -> StatusView {
    d.deploy(id).await.expect("deploy");
    wait_status(d, id, |s| s == ExperimentStatus::Ready || s.is_terminal(), 30).await
}

/// Submit, deploy, execute and wait for a terminal status.
pub async fn run_to_end(d: &Director, manifest: &str, secs: u64) -> (String, StatusView) {
    let id = d.submit_manifest(manifest).await.expect("submit");
    let v = deploy_ready(d, &id).await;
    assert_eq!(v.status, ExperimentStatus::Ready, "deploy: {:?}", v.errors);
    d.execute(&id).await.expect("execute");
    let v = wait_status(d, &id, ExperimentStatus::is_terminal, secs).await;
    (id, v)
}

pub mod fake {
    use std::collections::BTreeMap;
    use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
    use std::sync::Mutex;

    use async_trait::async_trait;
    use expforge::clock::wall_now_ns;
    use expforge::compiler::compile_with;
    use expforge::executor::{ExecutorSettings, PipelineBundle, PipelineReport};
    use expforge::gateway::{FlagRecord, GatewayApi, GatewayError, IngestAck, IngestOutcome};
    use expforge::model::{Experiment, NodeDescriptor, NodeKind, Pipeline};
    use expforge::tasks::TaskRegistry;

    /// In-memory gateway with switchable outages.
    #[derive(Default)]
    pub struct FakeGateway {
        pub bundles: Mutex<BTreeMap<(String, String), PipelineBundle>>,
        pub reports: Mutex<BTreeMap<(String, String), PipelineReport>>,
        pub flags: Mutex<BTreeMap<(String, String), FlagRecord>>,
        pub artifacts: Mutex<BTreeMap<(String, String, String), Vec<u8>>>,
        pub ingest_calls: AtomicU32,
        /// Ingest attempts that fail before the gateway "comes up".
        pub fail_first: AtomicU32,
        pub down: AtomicBool,
    }

    impl FakeGateway {
        pub fn new() -> Self {
            Self::default()
        }

        pub fn with_bundle(self, b: PipelineBundle) -> Self {
            self.bundles.lock().unwrap().insert((b.experiment_id.clone(), b.node_id.clone()), b);
            self
        }

        fn up(&self) -> Result<(), GatewayError> {
            if self.down.load(Ordering::SeqCst) {
                return Err(GatewayError::transport("down"));
            }
            Ok(())
        }

        pub fn report(&self, exp: &str, node: &str) -> Option<PipelineReport> {
            self.reports.lock().unwrap().get(&(exp.to_string(), node.to_string())).cloned()
        }
    }

    #[async_trait]
    impl GatewayApi for FakeGateway {
        async fn fetch_bundle(&self, experiment_id: &str, node_id: &str) -> Result<PipelineBundle, GatewayError> {
            self.up()?;
            self.bundles.lock().unwrap().get(&(experiment_id.to_string(), node_id.to_string())).cloned().ok_or(
                GatewayError::UnknownAssignment { experiment_id: experiment_id.into(), node_id: node_id.into() },
            )
        }

        async fn ingest_report(&self, report: &PipelineReport) -> Result<IngestAck, GatewayError> {
            self.ingest_calls.fetch_add(1, Ordering::SeqCst);
            self.up()?;
            if self.fail_first.load(Ordering::SeqCst) > 0 {
                self.fail_first.fetch_sub(1, Ordering::SeqCst);
                return Err(GatewayError::transport("warming up"));
            }
            let mut reports = self.reports.lock().unwrap();
            let key = (report.experiment_id.clone(), report.node_id.clone());
            if reports.contains_key(&key) {
                return Ok(IngestAck { outcome: IngestOutcome::Duplicate, late: false });
            }
            reports.insert(key, report.clone());
            Ok(IngestAck { outcome: IngestOutcome::Accepted, late: false })
        }

        async fn set_flag(&self, experiment_id: &str, key: &str, node_id: &str) -> Result<FlagRecord, GatewayError> {
            self.up()?;
            Ok(self
                .flags
                .lock()
                .unwrap()
                .entry((experiment_id.to_string(), key.to_string()))
                .or_insert_with(|| FlagRecord { key: key.into(), set_at_ns: wall_now_ns(), setter: node_id.into() })
                .clone())
        }

        async fn get_flag(&self, experiment_id: &str, key: &str) -> Result<Option<FlagRecord>, GatewayError> {
            self.up()?;
            Ok(self.flags.lock().unwrap().get(&(experiment_id.to_string(), key.to_string())).cloned())
        }

        async fn put_artifact(
            &self,
            experiment_id: &str,
            node_id: &str,
            name: &str,
            bytes: Vec<u8>,
        ) -> Result<String, GatewayError> {
            self.up()?;
            let digest = expforge::canonical::sha256_hex(&bytes);
            self.artifacts.lock().unwrap().insert((experiment_id.into(), node_id.into(), name.into()), bytes);
            Ok(digest)
        }
    }

    /// Compiles `pipeline` for one node of `kind` and returns its bundle.
    pub fn bundle(exp_id: &str, node_id: &str, kind: NodeKind, pipeline: &Pipeline, settings: &ExecutorSettings) -> PipelineBundle {
        let node = NodeDescriptor::new(node_id, kind, "test");
        let exp = Experiment::new(exp_id).map(pipeline, &[node]).unwrap();
        let plan = compile_with(&exp, &TaskRegistry::builtin(), settings).unwrap();
        plan.node_bundles[node_id].bundle.clone()
    }
}
