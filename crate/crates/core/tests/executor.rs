mod common;

use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::fake::{bundle, FakeGateway};
use expforge::executor::{
    AgentOutcome, BundleSource, DeliveryState, ExecutorSettings, MemScratch, MemSpool, NodeAgent, PipelineBundle,
    RetryPolicy, Scratch, Spool,
};
use expforge::gateway::GatewayApi;
use expforge::model::{NodeKind, Outcome, Payload, Pipeline, TaskResult, TaskSpec};
use expforge::tasks::ImplementationCatalog;

const EXP: &str = "exp";
const NODE: &str = "n1";

fn settings() -> ExecutorSettings {
    ExecutorSettings {
        report_retry: RetryPolicy { base_delay_ms: 10, factor: 2, max_attempts: 4 },
        flag_poll_interval_ms: 20,
    }
}

fn pipeline(stages: Vec<Vec<TaskSpec>>) -> Pipeline {
    stages.into_iter().fold(Pipeline::new("p"), |p, s| p.then(s).unwrap())
}

fn linux(stages: Vec<Vec<TaskSpec>>) -> PipelineBundle {
    bundle(EXP, NODE, NodeKind::LinuxShell, &pipeline(stages), &settings())
}

struct Harness {
    gw: Arc<FakeGateway>,
    scratch: Arc<dyn Scratch>,
    spool: Arc<dyn Spool>,
}

impl Harness {
    fn new(gw: FakeGateway) -> Self {
        Self { gw: Arc::new(gw), scratch: Arc::new(MemScratch::new()), spool: Arc::new(MemSpool::new()) }
    }

    fn with_dir(gw: FakeGateway, dir: &std::path::Path) -> Self {
        let scratch = expforge::executor::DirScratch::new(dir.join("scratch")).unwrap();
        let spool = expforge::executor::DirSpool::new(dir.join("spool")).unwrap();
        Self { gw: Arc::new(gw), scratch: Arc::new(scratch), spool: Arc::new(spool) }
    }

    async fn run(&self, b: &PipelineBundle) -> AgentOutcome {
        let agent = NodeAgent {
            experiment_id: b.experiment_id.clone(),
            node_id: b.node_id.clone(),
            exec_token: "t".into(),
            gateway: Arc::clone(&self.gw) as Arc<dyn GatewayApi>,
            scratch: Arc::clone(&self.scratch),
            spool: Arc::clone(&self.spool),
            catalog: Arc::new(ImplementationCatalog::builtin()),
            observer: None,
            source: BundleSource::Inline(Box::new(b.clone())),
        };
        agent.run().await.expect("executor starts")
    }
}

fn result<'a>(out: &'a AgentOutcome, name: &str) -> &'a TaskResult {
    out.report.results.iter().find(|r| r.task_name == name).unwrap_or_else(|| panic!("no result `{name}`"))
}

#[tokio::test]
async fn shell_output_and_exit_codes() {
    let h = Harness::new(FakeGateway::new());
    let b = linux(vec![vec![
        TaskSpec::shell("echo hi").named("ok"),
        TaskSpec::shell("echo partial; exit 3").named("bad"),
    ]]);
    let out = h.run(&b).await;
    let ok = result(&out, "ok");
    assert_eq!(ok.outcome, Outcome::Success);
    assert_eq!(ok.payload, Some(Payload::Text("hi\n".into())));
    let bad = result(&out, "bad");
    assert_eq!(bad.outcome, Outcome::Failure);
    assert!(bad.error_text.as_deref().unwrap().contains('3'), "{:?}", bad.error_text);
    assert_eq!(bad.payload, Some(Payload::Text("partial\n".into())));
    assert!(out.delivery.is_delivered());
    assert_eq!(h.gw.report(EXP, NODE).unwrap(), out.report);
}

#[tokio::test]
async fn tasks_in_a_stage_run_concurrently() {
    let h = Harness::new(FakeGateway::new());
    let tasks: Vec<_> = (0..10).map(|i| TaskSpec::sleep(0.5).named(format!("s{i}"))).collect();
    let b = linux(vec![tasks]);
    let t0 = Instant::now();
    let out = h.run(&b).await;
    let took = t0.elapsed();
    assert!(took < Duration::from_millis(1500), "10 x 0.5 s took {took:?}");
    assert!(out.report.results.iter().all(|r| r.outcome == Outcome::Success));
}

#[tokio::test]
async fn hanging_task_times_out_without_holding_others() {
    let h = Harness::new(FakeGateway::new());
    let b = linux(vec![
        vec![TaskSpec::shell("sleep 60").named("hang").timeout(1.0), TaskSpec::shell("echo fast").named("fast")],
        vec![TaskSpec::shell("echo after").named("after")],
    ]);
    let t0 = Instant::now();
    let out = h.run(&b).await;
    assert!(t0.elapsed() < Duration::from_secs(10));
    assert_eq!(result(&out, "hang").outcome, Outcome::Timeout);
    let fast = result(&out, "fast");
    assert_eq!(fast.outcome, Outcome::Success);
    assert!(fast.duration_ns().unwrap() < 1_000_000_000);
    assert_eq!(result(&out, "after").outcome, Outcome::Success);
}

#[tokio::test]
async fn early_stop_skips_later_stages() {
    let h = Harness::new(FakeGateway::new());
    let p = pipeline(vec![
        vec![TaskSpec::shell("exit 1").named("fail"), TaskSpec::shell("true").named("sibling")],
        vec![TaskSpec::shell("true").named("x"), TaskSpec::shell("true").named("y")],
        vec![TaskSpec::shell("true").named("z")],
    ])
    .with_early_stop(true);
    let b = bundle(EXP, NODE, NodeKind::LinuxShell, &p, &settings());
    let out = h.run(&b).await;
    let outcomes: Vec<_> = out.report.results.iter().map(|r| (r.task_name.as_str(), r.outcome)).collect();
    assert_eq!(
        outcomes,
        [
            ("fail", Outcome::Failure),
            ("sibling", Outcome::Success),
            ("x", Outcome::Skipped),
            ("y", Outcome::Skipped),
            ("z", Outcome::Skipped)
        ]
    );
    assert!(out.report.results.iter().all(TaskResult::timestamps_consistent));
    assert_eq!(out.report.results.len(), b.pipeline.task_count());
}

#[tokio::test]
async fn unknown_implementation_becomes_a_failure() {
    let h = Harness::new(FakeGateway::new());
    let mut b = linux(vec![vec![TaskSpec::shell("true").named("a")], vec![TaskSpec::shell("true").named("b")]]);
    b.implementations.insert("a".into(), "vendor.missing".into());
    let b = b.seal();
    let out = h.run(&b).await;
    let a = result(&out, "a");
    assert_eq!(a.outcome, Outcome::Failure);
    assert!(a.error_text.as_deref().unwrap().contains("vendor.missing"));
    assert_eq!(result(&out, "b").outcome, Outcome::Success);
}

#[tokio::test]
async fn stage_barrier_holds() {
    let h = Harness::new(FakeGateway::new());
    let b = linux(vec![
        vec![TaskSpec::sleep(0.2).named("a"), TaskSpec::sleep(0.05).named("b")],
        vec![TaskSpec::sleep(0.01).named("c"), TaskSpec::shell("true").named("d")],
        vec![TaskSpec::shell("true").named("e")],
    ]);
    let out = h.run(&b).await;
    assert!(out.report.barrier_violations().is_empty());
    let end_a = result(&out, "a").finished_at.unwrap().mono_ns;
    for n in ["c", "d"] {
        assert!(result(&out, n).started_at.unwrap().mono_ns >= end_a);
    }
    assert_eq!(out.report.stages.len(), 3);
}

#[tokio::test]
async fn digest_mismatch_is_refused() {
    let h = Harness::new(FakeGateway::new());
    let mut b = linux(vec![vec![TaskSpec::shell("true")]]);
    b.early_stop = !b.early_stop;
    let agent = NodeAgent {
        experiment_id: EXP.into(),
        node_id: NODE.into(),
        exec_token: "t".into(),
        gateway: Arc::clone(&h.gw) as Arc<dyn GatewayApi>,
        scratch: Arc::clone(&h.scratch),
        spool: Arc::clone(&h.spool),
        catalog: Arc::new(ImplementationCatalog::builtin()),
        observer: None,
        source: BundleSource::Inline(Box::new(b)),
    };
    assert!(matches!(agent.run().await, Err(expforge::executor::ExecutorError::DigestMismatch)));
}

#[tokio::test]
async fn bundle_is_fetched_from_the_gateway() {
    let b = linux(vec![vec![TaskSpec::shell("echo fetched").named("a")]]);
    let h = Harness::new(FakeGateway::new().with_bundle(b.clone()));
    let agent = NodeAgent {
        experiment_id: EXP.into(),
        node_id: NODE.into(),
        exec_token: "t".into(),
        gateway: Arc::clone(&h.gw) as Arc<dyn GatewayApi>,
        scratch: Arc::clone(&h.scratch),
        spool: Arc::clone(&h.spool),
        catalog: Arc::new(ImplementationCatalog::builtin()),
        observer: None,
        source: BundleSource::Gateway,
    };
    let out = agent.run().await.unwrap();
    assert_eq!(out.report.bundle_digest, b.digest);
    assert_eq!(result(&out, "a").payload, Some(Payload::Text("fetched\n".into())));
}

#[tokio::test]
async fn flaky_gateway_gets_the_report_on_a_later_attempt() {
    let gw = FakeGateway::new();
    gw.fail_first.store(2, Ordering::SeqCst);
    let h = Harness::new(gw);
    let out = h.run(&linux(vec![vec![TaskSpec::shell("true")]])).await;
    assert!(matches!(out.delivery, DeliveryState::Delivered { attempts: 3, .. }), "{:?}", out.delivery);
    assert!(h.gw.report(EXP, NODE).is_some());
    assert!(h.spool.pending().unwrap().is_empty());
}

#[tokio::test]
async fn unreachable_gateway_spools_and_next_launch_drains() {
    let dir = tempfile::tempdir().unwrap();
    let gw = FakeGateway::new();
    gw.down.store(true, Ordering::SeqCst);
    let h = Harness::with_dir(gw, dir.path());
    let b = linux(vec![vec![TaskSpec::shell("echo kept").named("a")]]);
    let out = h.run(&b).await;
    let DeliveryState::Spooled { attempts, location, .. } = &out.delivery else {
        panic!("expected spooled, got {:?}", out.delivery);
    };
    assert_eq!(*attempts, 4);
    assert_eq!(h.gw.ingest_calls.load(Ordering::SeqCst), 4);
    assert!(std::path::Path::new(location).exists(), "{location}");
    assert!(h.gw.report(EXP, NODE).is_none());

    // Gateway back; a fresh executor for another experiment drains the spool first.
    h.gw.down.store(false, Ordering::SeqCst);
    let other = bundle("exp2", NODE, NodeKind::LinuxShell, &pipeline(vec![vec![TaskSpec::shell("true")]]), &settings());
    let out2 = h.run(&other).await;
    assert_eq!(out2.drained.len(), 1);
    assert!(out2.drained[0].2.is_delivered());
    assert_eq!(h.gw.report(EXP, NODE).unwrap(), out.report);
    assert!(h.gw.report("exp2", NODE).is_some());
    assert!(h.spool.pending().unwrap().is_empty());
}

#[tokio::test(start_paused = true)]
async fn wait_flag_already_set_returns_at_once() {
    let h = Harness::new(FakeGateway::new());
    h.gw.set_flag(EXP, "ready", "server").await.unwrap();
    let b = linux(vec![vec![TaskSpec::wait_flag("ready", 5.0).named("w")]]);
    let t0 = tokio::time::Instant::now();
    let out = h.run(&b).await;
    assert!(t0.elapsed() < Duration::from_millis(50));
    let w = result(&out, "w");
    assert_eq!(w.outcome, Outcome::Success);
    assert_eq!(w.payload.as_ref().unwrap().as_json().unwrap()["setter"], "server");
}

#[tokio::test(start_paused = true)]
async fn wait_flag_returns_soon_after_the_flag_is_set() {
    let h = Harness::new(FakeGateway::new());
    let gw = Arc::clone(&h.gw);
    tokio::spawn(async move {
        tokio::time::sleep(Duration::from_secs(2)).await;
        gw.set_flag(EXP, "ready", "server").await.unwrap();
    });
    let b = linux(vec![vec![TaskSpec::wait_flag("ready", 30.0).named("w")]]);
    let t0 = tokio::time::Instant::now();
    let out = h.run(&b).await;
    let took = t0.elapsed();
    assert_eq!(result(&out, "w").outcome, Outcome::Success);
    assert!(took >= Duration::from_secs(2) && took <= Duration::from_millis(2100), "{took:?}");
}

#[tokio::test(start_paused = true)]
async fn wait_flag_never_set_times_out() {
    let h = Harness::new(FakeGateway::new());
    let b = linux(vec![vec![TaskSpec::wait_flag("never", 5.0).named("w").timeout(60.0)]]);
    let t0 = tokio::time::Instant::now();
    let out = h.run(&b).await;
    let took = t0.elapsed();
    let w = result(&out, "w");
    assert_eq!(w.outcome, Outcome::Failure);
    assert!(w.error_text.as_deref().unwrap().contains("never"));
    assert!(took >= Duration::from_secs(5) && took < Duration::from_millis(5100), "{took:?}");
}

#[tokio::test]
async fn upload_sends_scratch_files_to_the_gateway() {
    let h = Harness::new(FakeGateway::new());
    h.scratch.write("out/data.bin", b"payload").unwrap();
    let b = linux(vec![vec![TaskSpec::new("upload").named("up").param("paths", "out/data.bin")]]);
    let out = h.run(&b).await;
    assert_eq!(result(&out, "up").outcome, Outcome::Success, "{:?}", result(&out, "up").error_text);
    let stored = h.gw.artifacts.lock().unwrap().get(&(EXP.into(), NODE.into(), "data.bin".into())).cloned();
    assert_eq!(stored.as_deref(), Some(&b"payload"[..]));

    let b = linux(vec![vec![TaskSpec::new("upload").named("up").param("paths", "absent.txt")]]);
    let out = h.run(&b).await;
    assert!(result(&out, "up").error_text.as_deref().unwrap().contains("absent.txt"));
}

#[tokio::test]
async fn stub_capture_and_stop() {
    let h = Harness::new(FakeGateway::new());
    let p = pipeline(vec![
        vec![TaskSpec::new("pcap-capture").named("cap").param("iface", "eth0").param("out_path", "c.pcap")],
        vec![TaskSpec::new("pcap-capture-stop").named("stop")],
        vec![TaskSpec::new("pcap-capture-stop").named("again")],
    ]);
    let b = bundle(EXP, NODE, NodeKind::Simulated, &p, &settings());
    let out = h.run(&b).await;
    assert_eq!(result(&out, "cap").outcome, Outcome::Success);
    let stop = result(&out, "stop");
    assert_eq!(stop.outcome, Outcome::Success);
    assert_eq!(stop.payload.as_ref().unwrap().as_json().unwrap()["bytes"], 24);
    assert_eq!(result(&out, "again").outcome, Outcome::Failure);
}

#[tokio::test]
async fn port_check_open_and_closed() {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let open = listener.local_addr().unwrap().port();
    let closed = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let h = Harness::new(FakeGateway::new());
    let check = |name: &str, port: u16| {
        TaskSpec::new("port-check").named(name).param("host", "127.0.0.1").param("port", port as i64)
    };
    let out = h.run(&linux(vec![vec![check("open", open), check("closed", closed)]])).await;
    let json = |n: &str| result(&out, n).payload.as_ref().unwrap().as_json().unwrap().clone();
    assert_eq!(json("open")["open"], true);
    assert_eq!(json("closed")["open"], false);
}

#[tokio::test]
async fn icmp_ping_of_loopback() {
    let h = Harness::new(FakeGateway::new());
    let ping = TaskSpec::new("ping").named("ping").param("target", "127.0.0.1").param("count", 3i64).param("interval_s", 0.05);
    let out = h.run(&linux(vec![vec![ping]])).await;
    let r = result(&out, "ping");
    match r.outcome {
        Outcome::Success => {
            let v = r.payload.as_ref().unwrap().as_json().unwrap();
            assert_eq!(v["transmitted"], 3, "{v}");
            assert_eq!(v["loss_pct"], 0.0, "{v}");
        }
        // Without raw or datagram ICMP sockets the task must fail cleanly.
        _ => assert!(r.error_text.as_deref().unwrap().contains("icmp socket"), "{:?}", r.error_text),
    }
}
