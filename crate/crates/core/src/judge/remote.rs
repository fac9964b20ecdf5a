use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{JudgeBackend, JudgeError, JudgeRequest};

pub const ENDPOINT_ENV: &str = "JUDGE_ENDPOINT";
pub const API_KEY_ENV: &str = "JUDGE_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Full URL of a chat-completion style endpoint.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    /// Attempts per request, first try included.
    pub max_attempts: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            api_key: None,
            model: "default".into(),
            timeout: Duration::from_secs(120),
            max_attempts: 5,
            backoff: Duration::from_millis(500),
        }
    }

    /// Reads `JUDGE_ENDPOINT` and `JUDGE_API_KEY`; `None` without an endpoint.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty())?;
        let mut cfg = RemoteConfig::new(endpoint);
        cfg.api_key = std::env::var(API_KEY_ENV).ok().filter(|s| !s.is_empty());
        Some(cfg)
    }
}

/// Backend talking to an HTTP chat-completion endpoint.
///
/// 429 and 5xx replies and transport errors are retried with exponential
/// backoff; 401 and 403 fail at once.
pub struct RemoteBackend {
    config: RemoteConfig,
    client: Client,
    retries: AtomicU64,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, JudgeError> {
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| JudgeError::NetworkError(e.to_string()))?;
        Ok(RemoteBackend { config, client, retries: AtomicU64::new(0) })
    }

    /// Retries performed so far, across all requests.
    pub fn retry_count(&self) -> u64 {
        self.retries.load(Ordering::SeqCst)
    }

    fn body(&self, request: &JudgeRequest) -> Value {
        json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [
                {"role": "user", "content": request.instructions},
            ],
        })
    }

    fn once(&self, body: &Value) -> Result<String, JudgeError> {
        let mut call = self.client.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.config.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| JudgeError::NetworkError(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| JudgeError::NetworkError(e.to_string()))?;
        match status {
            s if s.is_success() => Ok(extract_content(&text)),
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => {
                Err(JudgeError::AuthError(format!("HTTP {}", status.as_u16())))
            }
            StatusCode::TOO_MANY_REQUESTS => Err(JudgeError::RateLimited(format!("HTTP {}", status.as_u16()))),
            s if s.is_server_error() => Err(JudgeError::NetworkError(format!("HTTP {}", s.as_u16()))),
            s => Err(JudgeError::Backend(format!("HTTP {}: {}", s.as_u16(), truncate(&text, 200)))),
        }
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// `choices[0].message.content` when present, else the raw body.
fn extract_content(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| v.pointer("/choices/0/message/content").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| body.to_string())
}

impl JudgeBackend for RemoteBackend {
    fn evaluate(&self, request: &JudgeRequest) -> Result<String, JudgeError> {
        let body = self.body(request);
        let mut delay = self.config.backoff;
        let mut attempt = 1;
        loop {
            match self.once(&body) {
                Ok(text) => return Ok(text),
                Err(e @ (JudgeError::RateLimited(_) | JudgeError::NetworkError(_)))
                    if attempt < self.config.max_attempts =>
                {
                    self.retries.fetch_add(1, Ordering::SeqCst);
                    tracing::warn!(attempt, "judge endpoint: {e}; retrying in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn identity(&self) -> String {
        format!("remote:{}#{}", self.config.endpoint, self.config.model)
    }

    fn is_deterministic(&self) -> bool {
        false
    }
}
