//! Blocking HTTP client for the director API, used by the CLI.

use std::time::{Duration, Instant};

use reqwest::blocking::{Client as Http, Response};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use thiserror::Error;

use crate::director::{ResultsView, StatusView};
use crate::model::{is_reachable, ExperimentStatus, NodeDescriptor};

/// Process exit codes of the CLI.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const INVALID: i32 = 2;
    pub const CONFLICT: i32 = 3;
    pub const NOT_FOUND: i32 = 4;
    pub const TRANSPORT: i32 = 5;
    pub const EXPERIMENT_FAILED: i32 = 6;
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{message}")]
    Api { status: u16, class: String, message: String },
    #[error("cannot reach director: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Decode(String),
    #[error("{0}")]
    Invalid(String),
    #[error("timed out waiting for `{id}`; last status {status}")]
    Timeout { id: String, status: ExperimentStatus },
    #[error("observed illegal status change {from} -> {to}")]
    IllegalSequence { from: ExperimentStatus, to: ExperimentStatus },
}

impl ClientError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::Api { status: 400, .. } | ClientError::Invalid(_) => exit::INVALID,
            ClientError::Api { status: 409, .. } => exit::CONFLICT,
            ClientError::Api { status: 404, .. } => exit::NOT_FOUND,
            ClientError::Transport(_) => exit::TRANSPORT,
            ClientError::Timeout { .. } => exit::EXPERIMENT_FAILED,
            ClientError::Api { .. } | ClientError::Decode(_) | ClientError::IllegalSequence { .. } => exit::INTERNAL,
        }
    }
}

#[derive(Deserialize)]
struct ApiError {
    error: String,
    message: String,
}

#[derive(Deserialize)]
struct Submitted {
    experiment_id: String,
}

#[derive(Deserialize)]
struct StatusAck {
    status: ExperimentStatus,
}

#[derive(Deserialize)]
struct NodeList {
    nodes: Vec<NodeDescriptor>,
}

#[derive(Deserialize)]
struct ExperimentList {
    experiments: Vec<String>,
}

pub struct Client {
    base: String,
    http: Http,
}

impl Client {
    pub fn new(endpoint: &str) -> Self {
        let http = Http::builder()
            .timeout(Duration::from_secs(60))
            .connect_timeout(Duration::from_secs(5))
            .build()
            .expect("http client");
        Self { base: endpoint.trim_end_matches('/').to_string(), http }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/api/v1{path}", self.base)
    }

    fn decode<T: DeserializeOwned>(resp: Result<Response, reqwest::Error>) -> Result<T, ClientError> {
        let resp = resp.map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.bytes().map_err(|e| ClientError::Transport(e.to_string()))?;
        if status.is_success() {
            return serde_json::from_slice(&body).map_err(|e| ClientError::Decode(e.to_string()));
        }
        match serde_json::from_slice::<ApiError>(&body) {
            Ok(e) => Err(ClientError::Api { status: status.as_u16(), class: e.error, message: e.message }),
            Err(_) => Err(ClientError::Api {
                status: status.as_u16(),
                class: "unknown".into(),
                message: format!("{status}: {}", String::from_utf8_lossy(&body)),
            }),
        }
    }

    fn post<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Self::decode(self.http.post(self.url(path)).send())
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Self::decode(self.http.get(self.url(path)).send())
    }

    pub fn submit(&self, manifest: &str) -> Result<String, ClientError> {
        let r: Submitted = Self::decode(
            self.http.post(self.url("/experiments")).header("content-type", "application/yaml").body(manifest.to_string()).send(),
        )?;
        Ok(r.experiment_id)
    }

    pub fn deploy(&self, id: &str) -> Result<ExperimentStatus, ClientError> {
        Ok(self.post::<StatusAck>(&format!("/experiments/{id}/deploy"))?.status)
    }

    pub fn execute(&self, id: &str) -> Result<ExperimentStatus, ClientError> {
        Ok(self.post::<StatusAck>(&format!("/experiments/{id}/execute"))?.status)
    }

    pub fn cancel(&self, id: &str) -> Result<ExperimentStatus, ClientError> {
        Ok(self.post::<StatusAck>(&format!("/experiments/{id}/cancel"))?.status)
    }

    pub fn cleanup(&self, id: &str) -> Result<StatusView, ClientError> {
        self.post(&format!("/experiments/{id}/cleanup"))
    }

    pub fn status(&self, id: &str) -> Result<StatusView, ClientError> {
        self.get(&format!("/experiments/{id}"))
    }

    pub fn results(&self, id: &str) -> Result<ResultsView, ClientError> {
        self.get(&format!("/experiments/{id}/results"))
    }

    pub fn experiments(&self) -> Result<Vec<String>, ClientError> {
        Ok(self.get::<ExperimentList>("/experiments")?.experiments)
    }

    pub fn nodes(&self, filters: &[(String, String)]) -> Result<Vec<NodeDescriptor>, ClientError> {
        let r: NodeList = Self::decode(self.http.get(self.url("/nodes")).query(filters).send())?;
        Ok(r.nodes)
    }

    /// Polls until `done(status)` holds. Every observed status change must
    /// be reachable along lifecycle edges; `observed` receives each poll.
    pub fn wait(
        &self,
        id: &str,
        poll: Duration,
        timeout: Duration,
        done: impl Fn(ExperimentStatus) -> bool,
        mut observed: impl FnMut(ExperimentStatus),
    ) -> Result<StatusView, ClientError> {
        let deadline = Instant::now() + timeout;
        let mut last: Option<ExperimentStatus> = None;
        loop {
            let view = self.status(id)?;
            if let Some(prev) = last {
                if !is_reachable(prev, view.status) {
                    return Err(ClientError::IllegalSequence { from: prev, to: view.status });
                }
            }
            last = Some(view.status);
            observed(view.status);
            if done(view.status) {
                return Ok(view);
            }
            if Instant::now() >= deadline {
                return Err(ClientError::Timeout { id: id.to_string(), status: view.status });
            }
            std::thread::sleep(poll);
        }
    }
}
