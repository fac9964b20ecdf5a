//! HTTP/JSON service over the evaluation pipeline.
//!
//! | method | path               | body               | reply             |
//! |--------|--------------------|--------------------|-------------------|
//! | GET    | `/healthz`         |                    | `{"status":"ok"}` |
//! | GET    | `/v1/checklist`    |                    | `ChecklistResponse` |
//! | POST   | `/v1/validate`     | `ValidateRequest`  | `ValidateResponse` |
//! | POST   | `/v1/runs`         | `RunRequest`       | `RunStatus` (202) |
//! | GET    | `/v1/runs/{id}`    |                    | `RunStatus`       |
//! | POST   | `/v1/aggregate`    | `AggregateRequest` | `AggregateOutput` |
//! | POST   | `/v1/agree`        | `AgreeRequest`     | `AgreeOutput`     |
//! | POST   | `/v1/rates`        | `RatesRequest`     | `[RateRow]`       |
//!
//! Errors are `{"error": {"kind", "message"}}` with status 400 for bad
//! input, 404 for unknown runs and 500 otherwise. Pipeline work runs on the
//! blocking pool.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use execeval_core::api::{
    AggregateRequest, AgreeRequest, ApiError, ChecklistResponse, ErrorBody, RatesRequest, RunRequest, RunState, RunStatus,
    ValidateRequest, ValidateResponse,
};
use execeval_core::analytics::RateRow;
use execeval_core::bundle::{load_bundle, load_bundle_unchecked, validate};
use execeval_core::pipeline::{
    agree, aggregate_task, parse_issue_list, rates, read_input, AggregateOutput, AgreeOutput, Engine, PipelineError,
};
use serde::Serialize;
use tokio::net::TcpListener;

pub struct HttpError {
    status: StatusCode,
    error: ApiError,
}

impl HttpError {
    fn bad_request(kind: &str, message: impl Into<String>) -> Self {
        HttpError { status: StatusCode::BAD_REQUEST, error: ApiError::new(kind, message) }
    }

    fn internal(message: impl Into<String>) -> Self {
        HttpError { status: StatusCode::INTERNAL_SERVER_ERROR, error: ApiError::new("internal", message) }
    }
}

impl From<PipelineError> for HttpError {
    fn from(e: PipelineError) -> Self {
        let status = if e.is_user_error() { StatusCode::BAD_REQUEST } else { StatusCode::INTERNAL_SERVER_ERROR };
        HttpError { status, error: ApiError::from(&e) }
    }
}

impl From<JsonRejection> for HttpError {
    fn from(e: JsonRejection) -> Self {
        HttpError::bad_request("bad_request", e.body_text())
    }
}

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.error })).into_response()
    }
}

type Reply<T> = Result<Json<T>, HttpError>;

#[derive(Clone, Default)]
pub struct AppState {
    runs: Arc<Mutex<HashMap<String, RunStatus>>>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/checklist", get(checklist))
        .route("/v1/validate", post(validate_bundle))
        .route("/v1/runs", post(start_run))
        .route("/v1/runs/{id}", get(run_status))
        .route("/v1/aggregate", post(aggregate))
        .route("/v1/agree", post(agree_handler))
        .route("/v1/rates", post(rates_handler))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(AppState::default())).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, HttpError> + Send + 'static) -> Result<T, HttpError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| HttpError::internal(format!("worker failed: {e}")))?
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
}

async fn healthz() -> Json<Health> {
    Json(Health { status: "ok" })
}

async fn checklist() -> Json<ChecklistResponse> {
    Json(ChecklistResponse::builtin())
}

async fn validate_bundle(body: Result<Json<ValidateRequest>, JsonRejection>) -> Reply<ValidateResponse> {
    let Json(req) = body?;
    let out = blocking(move || {
        let bundle = load_bundle_unchecked(&req.bundle).map_err(PipelineError::from)?;
        let report = validate(&bundle);
        Ok(ValidateResponse { task_id: bundle.task_id, valid: report.is_valid(), report })
    })
    .await?;
    Ok(Json(out))
}

async fn start_run(
    State(state): State<AppState>,
    body: Result<Json<RunRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<RunStatus>), HttpError> {
    let Json(req) = body?;
    if req.bundles.is_empty() {
        return Err(HttpError::bad_request("bad_request", "no bundles given"));
    }
    // Load and configure up front so input errors are reported synchronously.
    let (engine, bundles) = blocking(move || {
        let bundles = req
            .bundles
            .iter()
            .map(|p| load_bundle(p).map(Arc::new))
            .collect::<Result<Vec<_>, _>>()
            .map_err(PipelineError::from)?;
        Ok((Engine::from_config(req.config)?, bundles))
    })
    .await?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let status = RunStatus { id: id.clone(), state: RunState::Running, summary: None, error: None };
    state.runs.lock().expect("runs lock").insert(id.clone(), status.clone());
    let runs = state.runs.clone();
    tokio::task::spawn_blocking(move || {
        let result = engine.run(&bundles);
        let mut runs = runs.lock().expect("runs lock");
        let entry = runs.get_mut(&id).expect("run registered");
        match result {
            Ok(summary) => {
                entry.state = RunState::Succeeded;
                entry.summary = Some(summary);
            }
            Err(e) => {
                tracing::error!(run = %id, "run failed: {e}");
                entry.state = RunState::Failed;
                entry.error = Some(ApiError::from(&e));
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn run_status(State(state): State<AppState>, Path(id): Path<String>) -> Reply<RunStatus> {
    let runs = state.runs.lock().expect("runs lock");
    match runs.get(&id) {
        Some(s) => Ok(Json(s.clone())),
        None => Err(HttpError { status: StatusCode::NOT_FOUND, error: ApiError::new("not_found", format!("no run `{id}`")) }),
    }
}

async fn aggregate(body: Result<Json<AggregateRequest>, JsonRejection>) -> Reply<AggregateOutput> {
    let Json(req) = body?;
    Ok(Json(blocking(move || Ok(aggregate_task(&req.task_dir, req.policy)?)).await?))
}

async fn agree_handler(body: Result<Json<AgreeRequest>, JsonRejection>) -> Reply<AgreeOutput> {
    let Json(req) = body?;
    let out = blocking(move || {
        let agent = read_input(&req.agent)?;
        let human = read_input(&req.human)?;
        let issues = match &req.agent_issues {
            Some(p) => Some(parse_issue_list(&read_input(p)?)?),
            None => None,
        };
        Ok(agree(&agent, &human, issues)?)
    })
    .await?;
    Ok(Json(out))
}

async fn rates_handler(body: Result<Json<RatesRequest>, JsonRejection>) -> Reply<Vec<RateRow>> {
    let Json(req) = body?;
    Ok(Json(blocking(move || Ok(rates(&req.task_dirs, req.grouping, req.policy)?)).await?))
}
