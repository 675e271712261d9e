mod common;

use std::sync::Arc;
use std::time::Duration;

use common::*;
use expforge::connectivity::{FaultModel, SimEvent};
use expforge::director::{DeployState, DirectorError, ExecState, MemoryStore};
use expforge::executor::Scratch;
use expforge::gateway::{GatewayApi, GatewayError};
use expforge::model::{is_lifecycle_legal, ExperimentStatus, Outcome};

#[tokio::test]
async fn listing1_finishes_with_complete_results() {
    let c = sim(listing1_infra(1));
    let d = start_sim(&c).await;
    let (id, v) = run_to_end(&d, LISTING1, 60).await;
    assert_eq!(v.status, ExperimentStatus::Finished, "{:?}", v.errors);

    let results = d.results(&id).unwrap();
    let shapes: Vec<_> = results.pipelines.iter().map(|p| (p.pipeline_id.as_str(), p.nodes.len())).collect();
    assert_eq!(shapes, [("server", 1), ("attacker", 10), ("benign-client", 10)]);
    for p in &results.pipelines {
        for n in &p.nodes {
            let expected = if p.pipeline_id == "server" { 3 } else { 2 };
            assert_eq!(n.results.len(), expected, "{}", n.node_id);
            assert!(n.results.iter().all(|r| r.outcome == Outcome::Success), "{:?}", n.results);
        }
    }
    let history = d.record(&id).unwrap().status_history();
    assert!(is_lifecycle_legal(&history));
    assert_eq!(
        history,
        [
            ExperimentStatus::Submitted,
            ExperimentStatus::Compiling,
            ExperimentStatus::Deploying,
            ExperimentStatus::Ready,
            ExperimentStatus::Running,
            ExperimentStatus::Finished
        ]
    );
}

#[tokio::test]
async fn execute_requires_ready() {
    let c = uniform(2, 1, FaultModel::default());
    let d = start_sim(&c).await;
    let id = d.submit_manifest(LISTING1_SMALL).await.unwrap();
    assert!(matches!(d.execute(&id).await, Err(DirectorError::NotReady { status: ExperimentStatus::Submitted })));
    assert!(matches!(d.cleanup(&id).await, Err(DirectorError::WrongPhase { .. })));
    assert!(matches!(d.status("nope"), Err(DirectorError::UnknownExperiment(_))));
}

const LISTING1_SMALL: &str = r#"
name: small
nodes:
  all: { filter: { location: campus } }
pipelines:
  p:
    stages:
      - - { type: shell, params: { command: "write-file out.txt hello" } }
      - - { type: sleep, params: { seconds: 0.05 } }
assignments:
  - { pipeline: p, nodes: [all] }
"#;

#[tokio::test]
async fn gateway_phases_are_enforced() {
    let c = uniform(2, 1, FaultModel::default());
    let d = start_sim(&c).await;
    let id = d.submit_manifest(LISTING1_SMALL).await.unwrap();
    let gw = d.gateway();
    assert!(matches!(gw.fetch_bundle(&id, "sim-000").await, Err(GatewayError::WrongPhase { .. })));
    assert!(matches!(gw.fetch_bundle(&id, "ghost").await, Err(GatewayError::UnknownAssignment { .. })));
    assert!(matches!(gw.set_flag(&id, "k", "sim-000").await, Err(GatewayError::WrongPhase { .. })));
    assert!(matches!(gw.fetch_bundle("nope", "sim-000").await, Err(GatewayError::UnknownExperiment { .. })));

    deploy_ready(&d, &id).await;
    d.execute(&id).await.unwrap();
    let v = wait_status(&d, &id, ExperimentStatus::is_terminal, 20).await;
    assert_eq!(v.status, ExperimentStatus::Finished);
    assert!(matches!(gw.set_flag(&id, "k", "sim-000").await, Err(GatewayError::WrongPhase { .. })));
    assert!(gw.get_flag(&id, "k").await.unwrap().is_none());
    assert_eq!(c.infrastructure().scratch("sim-001").unwrap().read("out.txt").unwrap(), b"hello");
}

#[tokio::test]
async fn all_or_nothing_fails_best_effort_continues() {
    let faults = FaultModel { prepare_fail_nodes: ["sim-001".to_string()].into(), ..FaultModel::default() };
    let c = uniform(3, 1, faults.clone());
    let d = start_sim(&c).await;
    let id = d.submit_manifest(LISTING1_SMALL).await.unwrap();
    let v = deploy_ready(&d, &id).await;
    assert_eq!(v.status, ExperimentStatus::Failed);
    assert!(v.errors.iter().any(|e| e.contains("sim-001")), "{:?}", v.errors);

    let c = uniform(3, 1, faults);
    let d = start_sim(&c).await;
    let best = LISTING1_SMALL.replace("name: small", "name: small\npolicies: { deploy_strictness: best-effort }");
    let id = d.submit_manifest(&best).await.unwrap();
    let v = deploy_ready(&d, &id).await;
    assert_eq!(v.status, ExperimentStatus::Ready);
    let rec = d.record(&id).unwrap();
    assert_eq!(rec.nodes["sim-001"].deployment, DeployState::PrepareFailed);
    d.execute(&id).await.unwrap();
    let v = wait_status(&d, &id, ExperimentStatus::is_terminal, 20).await;
    assert_eq!(v.status, ExperimentStatus::Finished);
    // Fault containment: the failed node never sees a launch.
    assert!(!c.infrastructure().events("sim-001").iter().any(|e| matches!(e, SimEvent::Launch { .. })));
    assert_eq!(d.results(&id).unwrap().all_results().count(), 4);
}

#[tokio::test]
async fn silent_node_times_out_and_late_report_is_kept() {
    let faults = FaultModel { silent_nodes: ["sim-002".to_string()].into(), ..FaultModel::default() };
    let c = uniform(3, 1, faults);
    let d = start_sim(&c).await;
    let text = LISTING1_SMALL.replace("name: small", "name: small\npolicies: { experiment_timeout_s: 1 }");
    let (id, v) = run_to_end(&d, &text, 20).await;
    assert_eq!(v.status, ExperimentStatus::Finished);
    let rec = d.record(&id).unwrap();
    assert_eq!(rec.nodes["sim-002"].execution, ExecState::TimedOut);
    assert_eq!(rec.nodes["sim-000"].execution, ExecState::Reported);
}

#[tokio::test]
async fn cancel_then_cleanup() {
    let c = uniform(2, 1, FaultModel::default());
    let d = start_sim(&c).await;
    let text = LISTING1_SMALL.replace("seconds: 0.05", "seconds: 30");
    let id = d.submit_manifest(&text).await.unwrap();
    deploy_ready(&d, &id).await;
    d.execute(&id).await.unwrap();
    tokio::time::sleep(Duration::from_millis(200)).await;
    assert_eq!(d.cancel(&id).await.unwrap(), ExperimentStatus::Cancelled);
    assert!(matches!(d.cancel(&id).await, Err(DirectorError::AlreadyTerminal { .. })));
    let infra = c.infrastructure();
    assert!(infra.events("sim-000").iter().any(|e| matches!(e, SimEvent::Stop { .. })));
    tokio::time::sleep(Duration::from_millis(50)).await;
    assert_eq!(infra.running_executors(), 0);

    let v = d.cleanup(&id).await.unwrap();
    assert!(v.cleaned_up);
    assert!(v.nodes.iter().all(|n| n.cleanup.as_ref().is_some_and(|c| c.ok)));
    assert!(infra.scratch("sim-000").unwrap().list().is_empty());
    assert!(infra.events("sim-000").iter().any(|e| matches!(e, SimEvent::Cleanup { ok: true })));
}

#[tokio::test]
async fn partitioned_node_becomes_unreachable() {
    let c = uniform(2, 1, FaultModel::default());
    let d = start_sim(&c).await;
    let text = LISTING1_SMALL.replace("seconds: 0.05", "seconds: 2");
    let id = d.submit_manifest(&text).await.unwrap();
    deploy_ready(&d, &id).await;
    d.execute(&id).await.unwrap();
    tokio::time::sleep(Duration::from_millis(100)).await;
    c.infrastructure().set_reachable("sim-001", false);
    let v = wait_status(&d, &id, ExperimentStatus::is_terminal, 20).await;
    assert_eq!(v.status, ExperimentStatus::Finished);
    assert_eq!(d.record(&id).unwrap().nodes["sim-001"].execution, ExecState::Unreachable);
}

#[tokio::test]
async fn every_node_unreachable_fails() {
    let c = uniform(2, 1, FaultModel::default());
    let d = start_sim(&c).await;
    let id = d.submit_manifest(LISTING1_SMALL).await.unwrap();
    deploy_ready(&d, &id).await;
    for n in ["sim-000", "sim-001"] {
        c.infrastructure().set_reachable(n, false);
    }
    d.execute(&id).await.unwrap();
    let v = wait_status(&d, &id, ExperimentStatus::is_terminal, 20).await;
    assert_eq!(v.status, ExperimentStatus::Failed);
}

#[tokio::test]
async fn duplicate_submission_conflicts() {
    let c = uniform(2, 1, FaultModel::default());
    let d = start_sim(&c).await;
    d.submit_manifest(LISTING1_SMALL).await.unwrap();
    let e = d.submit_manifest(LISTING1_SMALL).await.unwrap_err();
    assert!(matches!(e, DirectorError::DuplicateExperiment(_)));
    let e = d.submit_manifest("name: x\nfoo: 1\n").await.unwrap_err();
    assert!(matches!(e, DirectorError::Manifest(_)));
}

#[tokio::test]
async fn equal_seeds_give_equal_traces() {
    let faults = FaultModel {
        prepare_fail_prob: 0.2,
        per_command_latency_ms: 2,
        latency_jitter_ms: 3,
        report_drop_prob: 0.3,
        ..FaultModel::default()
    };
    let mut traces = Vec::new();
    for _ in 0..2 {
        let c = uniform(6, 11, faults.clone());
        let d = common::start(Arc::new(c.clone()), Arc::new(MemoryStore::new()), fast_config()).await;
        let best = LISTING1_SMALL.replace("name: small", "name: small\npolicies: { deploy_strictness: best-effort }");
        let (_, v) = run_to_end(&d, &best, 30).await;
        assert_eq!(v.status, ExperimentStatus::Finished);
        traces.push(c.infrastructure().trace());
    }
    assert_eq!(traces[0], traces[1]);
}
