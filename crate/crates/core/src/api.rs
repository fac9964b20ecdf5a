//! Request and response bodies of the HTTP service. Paths are interpreted on
//! the server's filesystem.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::analytics::{Grouping, Policy};
use crate::bundle::ValidationReport;
use crate::checklist::{Applicability, Aspect, Dimension, ItemId};
use crate::config::RunConfig;
use crate::pipeline::{PipelineError, RunSummary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    /// Stable machine-readable category, e.g. `bundle` or `analytics`.
    pub kind: String,
    pub message: String,
}

impl ApiError {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError { kind: kind.into(), message: message.into() }
    }

    /// Kinds that describe a problem with the caller's input.
    pub fn is_user_error(&self) -> bool {
        !matches!(self.kind.as_str(), "internal" | "output")
    }
}

impl From<&PipelineError> for ApiError {
    fn from(e: &PipelineError) -> Self {
        let kind = match e {
            PipelineError::Bundle(_) => "bundle",
            PipelineError::Config(_) => "config",
            PipelineError::Analytics(_) => "analytics",
            PipelineError::Document { .. } => "document",
            PipelineError::Judge(_) => "judge",
            PipelineError::Input { .. } => "input",
            PipelineError::Output { .. } => "output",
        };
        ApiError::new(kind, e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ApiError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecklistEntry {
    pub id: ItemId,
    pub key: String,
    pub dimension: Dimension,
    pub aspect: Aspect,
    pub text: String,
    pub applicability: Applicability,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecklistResponse {
    pub version: String,
    pub items: Vec<ChecklistEntry>,
}

impl ChecklistResponse {
    pub fn builtin() -> Self {
        ChecklistResponse {
            version: crate::checklist::CHECKLIST_VERSION.to_string(),
            items: crate::checklist::builtin_checklist()
                .iter()
                .map(|i| ChecklistEntry {
                    id: i.id,
                    key: i.key.to_string(),
                    dimension: i.dimension,
                    aspect: i.aspect,
                    text: i.text.to_string(),
                    applicability: i.applicability,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidateRequest {
    pub bundle: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidateResponse {
    pub task_id: String,
    pub valid: bool,
    pub report: ValidationReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRequest {
    pub bundles: Vec<PathBuf>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStatus {
    pub id: String,
    pub state: RunState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<RunSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateRequest {
    pub task_dir: PathBuf,
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreeRequest {
    pub agent: PathBuf,
    pub human: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_issues: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatesRequest {
    pub task_dirs: Vec<PathBuf>,
    pub grouping: Grouping,
    pub policy: Policy,
}
