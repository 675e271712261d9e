use std::time::Duration;

use async_trait::async_trait;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;

use super::{FlagRecord, GatewayApi, GatewayError, IngestAck};
use crate::executor::{PipelineBundle, PipelineReport};

/// Gateway client over HTTP, used by executors outside the director process.
#[derive(Debug, Clone)]
pub struct HttpGateway {
    base: String,
    client: reqwest::Client,
}

#[derive(serde::Serialize, serde::Deserialize)]
pub(crate) struct SetFlagBody {
    pub node_id: String,
}

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub(crate) enum FlagState {
    Unset,
    Set(FlagRecord),
}

#[derive(serde::Serialize, serde::Deserialize)]
pub(crate) struct ArtifactAck {
    pub digest: String,
}

impl HttpGateway {
    pub fn new(endpoint: &str) -> Self {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(30))
            .connect_timeout(Duration::from_secs(5))
            .build()
            .expect("reqwest client");
        Self { base: endpoint.trim_end_matches('/').to_string(), client }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    async fn decode<T: DeserializeOwned>(resp: Result<reqwest::Response, reqwest::Error>) -> Result<T, GatewayError> {
        let resp = resp.map_err(|e| GatewayError::transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.bytes().await.map_err(|e| GatewayError::transport(e.to_string()))?;
        if status.is_success() {
            return serde_json::from_slice(&body).map_err(|e| GatewayError::Internal { message: e.to_string() });
        }
        if let Ok(err) = serde_json::from_slice::<GatewayError>(&body) {
            return Err(err);
        }
        let text = String::from_utf8_lossy(&body).into_owned();
        Err(if status == StatusCode::BAD_GATEWAY || status == StatusCode::SERVICE_UNAVAILABLE {
            GatewayError::transport(format!("{status}: {text}"))
        } else {
            GatewayError::Internal { message: format!("{status}: {text}") }
        })
    }
}

fn seg(s: &str) -> String {
    // Path segments are restricted to identifier characters by validation;
    // escape anything else defensively for flag keys.
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

#[async_trait]
impl GatewayApi for HttpGateway {
    async fn fetch_bundle(&self, experiment_id: &str, node_id: &str) -> Result<PipelineBundle, GatewayError> {
        let req = self
            .client
            .get(self.url("/gw/v1/bundle"))
            .query(&[("exp", experiment_id), ("node", node_id)])
            .send()
            .await;
        Self::decode(req).await
    }

    async fn ingest_report(&self, report: &PipelineReport) -> Result<IngestAck, GatewayError> {
        let req = self.client.post(self.url("/gw/v1/report")).json(report).send().await;
        Self::decode(req).await
    }

    async fn set_flag(&self, experiment_id: &str, key: &str, node_id: &str) -> Result<FlagRecord, GatewayError> {
        let req = self
            .client
            .post(self.url(&format!("/gw/v1/flags/{}/{}", seg(experiment_id), seg(key))))
            .json(&SetFlagBody { node_id: node_id.to_string() })
            .send()
            .await;
        Self::decode(req).await
    }

    async fn get_flag(&self, experiment_id: &str, key: &str) -> Result<Option<FlagRecord>, GatewayError> {
        let req = self
            .client
            .get(self.url(&format!("/gw/v1/flags/{}/{}", seg(experiment_id), seg(key))))
            .send()
            .await;
        Ok(match Self::decode::<FlagState>(req).await? {
            FlagState::Unset => None,
            FlagState::Set(f) => Some(f),
        })
    }

    async fn put_artifact(
        &self,
        experiment_id: &str,
        node_id: &str,
        name: &str,
        bytes: Vec<u8>,
    ) -> Result<String, GatewayError> {
        let req = self
            .client
            .post(self.url(&format!("/gw/v1/artifacts/{}/{}", seg(experiment_id), seg(node_id))))
            .query(&[("name", name)])
            .body(bytes)
            .send()
            .await;
        Ok(Self::decode::<ArtifactAck>(req).await?.digest)
    }
}
