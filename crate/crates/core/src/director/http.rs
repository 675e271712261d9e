//! HTTP surface: the experimenter API under `/api/v1` and the executor
//! gateway under `/gw/v1`, both JSON.

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::{Director, DirectorError, ErrorClass};
use crate::executor::PipelineReport;
use crate::gateway::{GatewayApi, GatewayError};

const BODY_LIMIT: usize = 64 * 1024 * 1024;

impl IntoResponse for DirectorError {
    fn into_response(self) -> Response {
        let class = self.class();
        let code = match class {
            ErrorClass::Invalid => StatusCode::BAD_REQUEST,
            ErrorClass::Conflict => StatusCode::CONFLICT,
            ErrorClass::NotFound => StatusCode::NOT_FOUND,
            ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": class, "message": self.to_string() });
        if let DirectorError::Validation(errs) = &self {
            body["details"] = json!(errs);
        }
        (code, Json(body)).into_response()
    }
}

struct GwError(GatewayError);

impl IntoResponse for GwError {
    fn into_response(self) -> Response {
        let code = match &self.0 {
            GatewayError::UnknownExperiment { .. } | GatewayError::UnknownAssignment { .. } => StatusCode::NOT_FOUND,
            GatewayError::WrongPhase { .. } => StatusCode::CONFLICT,
            GatewayError::BundleMismatch | GatewayError::InvalidRequest { .. } => StatusCode::BAD_REQUEST,
            GatewayError::Transport { .. } => StatusCode::BAD_GATEWAY,
            GatewayError::Internal { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (code, Json(self.0)).into_response()
    }
}

impl From<GatewayError> for GwError {
    fn from(e: GatewayError) -> Self {
        GwError(e)
    }
}

type ApiResult<T> = Result<Json<T>, DirectorError>;

pub fn router(director: Director) -> Router {
    Router::new()
        .route("/api/v1/experiments", post(submit).get(list))
        .route("/api/v1/experiments/{id}", get(status))
        .route("/api/v1/experiments/{id}/results", get(results))
        .route("/api/v1/experiments/{id}/deploy", post(deploy))
        .route("/api/v1/experiments/{id}/execute", post(execute))
        .route("/api/v1/experiments/{id}/cancel", post(cancel))
        .route("/api/v1/experiments/{id}/cleanup", post(cleanup))
        .route("/api/v1/nodes", get(nodes))
        .route("/gw/v1/bundle", get(bundle))
        .route("/gw/v1/report", post(report))
        .route("/gw/v1/flags/{exp}/{key}", post(set_flag).get(get_flag))
        .route("/gw/v1/artifacts/{exp}/{node}", post(put_artifact).get(get_artifact))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(director)
}

async fn submit(State(d): State<Director>, body: String) -> Result<(StatusCode, Json<serde_json::Value>), DirectorError> {
    let id = d.submit_manifest(&body).await?;
    Ok((StatusCode::CREATED, Json(json!({ "experiment_id": id }))))
}

async fn list(State(d): State<Director>) -> ApiResult<serde_json::Value> {
    Ok(Json(json!({ "experiments": d.experiment_ids() })))
}

async fn status(State(d): State<Director>, Path(id): Path<String>) -> ApiResult<super::StatusView> {
    Ok(Json(d.status(&id)?))
}

async fn results(State(d): State<Director>, Path(id): Path<String>) -> ApiResult<super::ResultsView> {
    Ok(Json(d.results(&id)?))
}

async fn deploy(State(d): State<Director>, Path(id): Path<String>) -> ApiResult<serde_json::Value> {
    let s = d.deploy(&id).await?;
    Ok(Json(json!({ "experiment_id": id, "status": s })))
}

async fn execute(State(d): State<Director>, Path(id): Path<String>) -> ApiResult<serde_json::Value> {
    let s = d.execute(&id).await?;
    Ok(Json(json!({ "experiment_id": id, "status": s })))
}

async fn cancel(State(d): State<Director>, Path(id): Path<String>) -> ApiResult<serde_json::Value> {
    let s = d.cancel(&id).await?;
    Ok(Json(json!({ "experiment_id": id, "status": s })))
}

async fn cleanup(State(d): State<Director>, Path(id): Path<String>) -> ApiResult<super::StatusView> {
    Ok(Json(d.cleanup(&id).await?))
}

async fn nodes(State(d): State<Director>, Query(filters): Query<Vec<(String, String)>>) -> ApiResult<serde_json::Value> {
    let pool = d.nodes(&filters).await?;
    Ok(Json(json!({ "nodes": pool.nodes() })))
}

#[derive(Deserialize)]
struct BundleQuery {
    exp: String,
    node: String,
}

async fn bundle(State(d): State<Director>, Query(q): Query<BundleQuery>) -> Result<Response, GwError> {
    Ok(Json(d.gateway().fetch_bundle(&q.exp, &q.node).await?).into_response())
}

async fn report(State(d): State<Director>, Json(r): Json<PipelineReport>) -> Result<Response, GwError> {
    Ok(Json(d.gateway().ingest_report(&r).await?).into_response())
}

#[derive(Deserialize)]
struct SetFlagBody {
    node_id: String,
}

async fn set_flag(
    State(d): State<Director>,
    Path((exp, key)): Path<(String, String)>,
    Json(b): Json<SetFlagBody>,
) -> Result<Response, GwError> {
    Ok(Json(d.gateway().set_flag(&exp, &key, &b.node_id).await?).into_response())
}

async fn get_flag(State(d): State<Director>, Path((exp, key)): Path<(String, String)>) -> Result<Response, GwError> {
    let body = match d.gateway().get_flag(&exp, &key).await? {
        None => json!({ "state": "unset" }),
        Some(f) => {
            let mut v = serde_json::to_value(f).expect("flag serializes");
            v["state"] = json!("set");
            v
        }
    };
    Ok(Json(body).into_response())
}

#[derive(Deserialize)]
struct ArtifactQuery {
    name: String,
}

async fn put_artifact(
    State(d): State<Director>,
    Path((exp, node)): Path<(String, String)>,
    Query(q): Query<ArtifactQuery>,
    body: Bytes,
) -> Result<Response, GwError> {
    let digest = d.gateway().put_artifact(&exp, &node, &q.name, body.to_vec()).await?;
    Ok(Json(json!({ "digest": digest })).into_response())
}

async fn get_artifact(
    State(d): State<Director>,
    Path((exp, node)): Path<(String, String)>,
    Query(q): Query<ArtifactQuery>,
) -> Result<Response, GwError> {
    match d.gateway().artifact(&exp, &node, &q.name)? {
        Some(bytes) => Ok((StatusCode::OK, bytes).into_response()),
        None => Err(GwError(GatewayError::UnknownAssignment { experiment_id: exp, node_id: node })),
    }
}
