//! Typed async client for the evaluation service.

use std::path::PathBuf;
use std::time::Duration;

use execeval_core::analytics::{Grouping, Policy, RateRow};
use execeval_core::api::{
    AggregateRequest, AgreeRequest, ApiError, ChecklistResponse, ErrorBody, RatesRequest, RunRequest, RunState, RunStatus,
    ValidateRequest, ValidateResponse,
};
use execeval_core::config::RunConfig;
use execeval_core::pipeline::{AggregateOutput, AgreeOutput};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{} ({status}): {}", error.kind, error.message)]
    Api { status: u16, error: ApiError },
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected reply ({status}): {body}")]
    Protocol { status: u16, body: String },
}

impl ClientError {
    /// True when the failure was caused by the request rather than the service.
    pub fn is_user_error(&self) -> bool {
        match self {
            ClientError::Api { status, error } => *status < 500 && error.is_user_error(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
    poll_interval: Duration,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        let base = base_url.into().trim_end_matches('/').to_string();
        Client { base, http: reqwest::Client::new(), poll_interval: Duration::from_millis(100) }
    }

    pub fn with_poll_interval(mut self, every: Duration) -> Self {
        self.poll_interval = every;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub async fn health(&self) -> Result<(), ClientError> {
        let _: serde_json::Value = self.get("/healthz").await?;
        Ok(())
    }

    pub async fn checklist(&self) -> Result<ChecklistResponse, ClientError> {
        self.get("/v1/checklist").await
    }

    pub async fn validate(&self, bundle: impl Into<PathBuf>) -> Result<ValidateResponse, ClientError> {
        self.post("/v1/validate", &ValidateRequest { bundle: bundle.into() }).await
    }

    /// Starts a run and returns immediately with its id.
    pub async fn start_run(&self, bundles: Vec<PathBuf>, config: RunConfig) -> Result<RunStatus, ClientError> {
        self.post("/v1/runs", &RunRequest { bundles, config }).await
    }

    pub async fn run_status(&self, id: &str) -> Result<RunStatus, ClientError> {
        self.get(&format!("/v1/runs/{id}")).await
    }

    /// Starts a run and polls until it leaves the running state.
    pub async fn run(&self, bundles: Vec<PathBuf>, config: RunConfig) -> Result<RunStatus, ClientError> {
        let mut status = self.start_run(bundles, config).await?;
        while status.state == RunState::Running {
            tokio::time::sleep(self.poll_interval).await;
            status = self.run_status(&status.id).await?;
        }
        Ok(status)
    }

    pub async fn aggregate(&self, task_dir: impl Into<PathBuf>, policy: Policy) -> Result<AggregateOutput, ClientError> {
        self.post("/v1/aggregate", &AggregateRequest { task_dir: task_dir.into(), policy }).await
    }

    pub async fn agree(&self, req: &AgreeRequest) -> Result<AgreeOutput, ClientError> {
        self.post("/v1/agree", req).await
    }

    pub async fn rates(
        &self,
        task_dirs: Vec<PathBuf>,
        grouping: Grouping,
        policy: Policy,
    ) -> Result<Vec<RateRow>, ClientError> {
        self.post("/v1/rates", &RatesRequest { task_dirs, grouping, policy }).await
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        decode(self.http.get(format!("{}{path}", self.base)).send().await?).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        decode(self.http.post(format!("{}{path}", self.base)).json(body).send().await?).await
    }
}

async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
    let status = resp.status().as_u16();
    let body = resp.text().await?;
    if (200..300).contains(&status) {
        return serde_json::from_str(&body).map_err(|_| ClientError::Protocol { status, body });
    }
    match serde_json::from_str::<ErrorBody>(&body) {
        Ok(e) => Err(ClientError::Api { status, error: e.error }),
        Err(_) => Err(ClientError::Protocol { status, body }),
    }
}
