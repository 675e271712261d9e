//! `expforge`: experimenter CLI, director server and node executor.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use expforge::client::{exit, Client, ClientError};
use expforge::connectivity::{build_connectors, ConnectorsFile};
use expforge::director::{router, Director, DirectorConfig, FileStore};
use expforge::executor::{agent_from_env, DeliveryState};
use expforge::manifest::ExperimentManifest;
use expforge::model::ExperimentStatus;
use expforge::tasks::TaskRegistry;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "expforge", version, about = "Distributed data-collection experiments")]
struct Cli {
    /// Director API endpoint.
    #[arg(long, global = true, env = "EXPFORGE_ENDPOINT", default_value = "http://127.0.0.1:7878")]
    endpoint: String,
    /// Seconds between status polls.
    #[arg(long, global = true, default_value_t = 0.5)]
    poll_interval: f64,
    /// Seconds to wait for an experiment before giving up.
    #[arg(long, global = true, default_value_t = 3600.0)]
    timeout: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Submit a manifest; prints the experiment id.
    Submit { manifest: PathBuf },
    /// Compile and prepare nodes.
    Deploy {
        id: String,
        /// Wait until READY or FAILED.
        #[arg(long)]
        wait: bool,
    },
    /// Start executors on prepared nodes.
    Execute {
        id: String,
        /// Wait until the experiment ends.
        #[arg(long)]
        wait: bool,
    },
    /// Submit, deploy, execute and wait; exits 0 only if FINISHED.
    Run {
        manifest: PathBuf,
        /// Write results here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the experiment's status view as JSON.
    Status { id: String },
    /// Print or save results grouped by pipeline, node and task.
    Results {
        id: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Node pool, optionally narrowed by `key=value` filters.
    Nodes {
        #[arg(long = "filter", value_parser = parse_filter)]
        filters: Vec<(String, String)>,
    },
    /// Stop a non-terminal experiment.
    Cancel { id: String },
    /// Remove node scratch state of a terminal experiment.
    Cleanup { id: String },
    /// Run the director with its HTTP API and gateway.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// Connector configuration file.
        #[arg(long)]
        connectors: PathBuf,
        /// Directory for persisted experiments and artifacts.
        #[arg(long)]
        state_dir: PathBuf,
        /// Gateway endpoint handed to remote executors; defaults to the
        /// listen address.
        #[arg(long)]
        gateway_endpoint: Option<String>,
    },
    /// Node executor, configured through EXPFORGE_* variables.
    Executor,
}

fn parse_filter(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected key=value, got `{s}`"))
}

enum Failure {
    Client(ClientError),
    Local(i32, String),
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure::Client(e)
    }
}

type CmdResult = Result<i32, Failure>;

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn write_out<T: Serialize>(v: &T, output: Option<&PathBuf>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).expect("json");
    match output {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| Failure::Local(exit::INTERNAL, format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn read_manifest(path: &PathBuf) -> Result<String, Failure> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Failure::Local(exit::INVALID, format!("{}: {e}", path.display())))?;
    ExperimentManifest::parse(&text).map_err(|e| Failure::Local(exit::INVALID, format!("{}: {e}", path.display())))?;
    Ok(text)
}

fn terminal_code(s: ExperimentStatus) -> i32 {
    if s == ExperimentStatus::Finished {
        exit::OK
    } else {
        exit::EXPERIMENT_FAILED
    }
}

fn client_command(cli: &Cli) -> CmdResult {
    let client = Client::new(&cli.endpoint);
    let poll = Duration::from_secs_f64(cli.poll_interval.max(0.01));
    let timeout = Duration::from_secs_f64(cli.timeout.max(0.0));
    let report = |s: ExperimentStatus| eprintln!("status: {s}");
    match &cli.command {
        Command::Submit { manifest } => {
            println!("{}", client.submit(&read_manifest(manifest)?)?);
            Ok(exit::OK)
        }
        Command::Deploy { id, wait } => {
            let s = client.deploy(id)?;
            if !wait {
                println!("{s}");
                return Ok(exit::OK);
            }
            let v = client.wait(id, poll, timeout, |s| s == ExperimentStatus::Ready || s.is_terminal(), report)?;
            println!("{}", v.status);
            Ok(if v.status == ExperimentStatus::Ready { exit::OK } else { exit::EXPERIMENT_FAILED })
        }
        Command::Execute { id, wait } => {
            let s = client.execute(id)?;
            if !wait {
                println!("{s}");
                return Ok(exit::OK);
            }
            let v = client.wait(id, poll, timeout, ExperimentStatus::is_terminal, report)?;
            println!("{}", v.status);
            Ok(terminal_code(v.status))
        }
        Command::Run { manifest, output } => {
            let id = client.submit(&read_manifest(manifest)?)?;
            eprintln!("experiment: {id}");
            client.deploy(&id)?;
            let v = client.wait(&id, poll, timeout, |s| s == ExperimentStatus::Ready || s.is_terminal(), report)?;
            if v.status == ExperimentStatus::Ready {
                client.execute(&id)?;
                client.wait(&id, poll, timeout, ExperimentStatus::is_terminal, report)?;
            }
            let results = client.results(&id)?;
            write_out(&results, output.as_ref())?;
            Ok(terminal_code(results.status))
        }
        Command::Status { id } => {
            print_json(&client.status(id)?);
            Ok(exit::OK)
        }
        Command::Results { id, output } => {
            write_out(&client.results(id)?, output.as_ref())?;
            Ok(exit::OK)
        }
        Command::Nodes { filters } => {
            print_json(&client.nodes(filters)?);
            Ok(exit::OK)
        }
        Command::Cancel { id } => {
            println!("{}", client.cancel(id)?);
            Ok(exit::OK)
        }
        Command::Cleanup { id } => {
            print_json(&client.cleanup(id)?);
            Ok(exit::OK)
        }
        Command::Serve { .. } | Command::Executor => unreachable!("handled by the runtime"),
    }
}

async fn serve(
    listen: &str,
    connectors: &PathBuf,
    state_dir: &PathBuf,
    gateway_endpoint: Option<String>,
) -> Result<(), String> {
    let file = ConnectorsFile::load(connectors).map_err(|e| e.to_string())?;
    let registry = build_connectors(&file).map_err(|e| e.to_string())?;
    let store = FileStore::open(state_dir).map_err(|e| e.to_string())?;
    let listener = tokio::net::TcpListener::bind(listen).await.map_err(|e| format!("{listen}: {e}"))?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    let config = DirectorConfig {
        gateway_endpoint: gateway_endpoint.unwrap_or_else(|| format!("http://{addr}")),
        ..DirectorConfig::default()
    };
    let director = Director::start(config, Arc::new(store), registry, TaskRegistry::builtin())
        .await
        .map_err(|e| e.to_string())?;
    for (id, status) in director.recovered() {
        tracing::info!(experiment = %id, %status, "recovered");
    }
    eprintln!("listening on http://{addr}");
    let app = router(director.clone());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| e.to_string())?;
    director.shutdown();
    Ok(())
}

async fn executor() -> i32 {
    let agent = match agent_from_env() {
        Ok(a) => a,
        Err(e) => {
            eprintln!("executor: {e}");
            return 1;
        }
    };
    match agent.run().await {
        Ok(out) => {
            match &out.delivery {
                DeliveryState::Delivered { attempts, .. } => tracing::info!(attempts, "report delivered"),
                DeliveryState::Spooled { location, last_error, .. } => {
                    tracing::warn!(%location, %last_error, "report spooled")
                }
                DeliveryState::Rejected { error, .. } => tracing::error!(%error, "report rejected"),
            }
            0
        }
        Err(e) => {
            eprintln!("executor: {e}");
            1
        }
    }
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime")
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Serve { listen, connectors, state_dir, gateway_endpoint } => {
            match runtime().block_on(serve(listen, connectors, state_dir, gateway_endpoint.clone())) {
                Ok(()) => exit::OK,
                Err(e) => {
                    eprintln!("serve: {e}");
                    exit::INTERNAL
                }
            }
        }
        Command::Executor => runtime().block_on(executor()),
        _ => match client_command(&cli) {
            Ok(code) => code,
            Err(Failure::Client(e)) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
            Err(Failure::Local(code, msg)) => {
                eprintln!("error: {msg}");
                code
            }
        },
    };
    ExitCode::from(code as u8)
}
