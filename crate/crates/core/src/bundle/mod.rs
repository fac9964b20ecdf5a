//! The unified research-output bundle: types, on-disk loader, validation and
//! redacted views.
//!
//! On-disk layout of a bundle directory:
//!
//! ```text
//! bundle.toml          task_id, category, has_demo, proposes_new_method, [[data]]
//! prompt.md            human input prompt (agent tasks)
//! plan.md
//! walkthrough.md       optional
//! report.md
//! results.json         {"metrics": [{"name", "value"}], "conclusions": [..]}
//! code/NNN_<kind>.txt  kind = notebook_block | script
//! code/NNN_<kind>.out  optional recorded output
//! code/NNN_<kind>.inputs  optional declared inputs, one relative path per line
//! code/*.ipynb         alternatively, one notebook split into units by cell order
//! data/
//! ```

mod load;
mod validate;
mod view;
mod write;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use load::{load_bundle, load_bundle_unchecked, safe_join, BundleError};
pub(crate) use load::parse_results_manifest;
pub use validate::{validate, Severity, ValidationReport, Violation};
pub use view::{derive_view, ArtifactKind, BundleView, ViewMode};
pub use write::write_bundle;

pub const MANIFEST_FILE: &str = "bundle.toml";
pub const PROMPT_FILE: &str = "prompt.md";
pub const PLAN_FILE: &str = "plan.md";
pub const WALKTHROUGH_FILE: &str = "walkthrough.md";
pub const REPORT_FILE: &str = "report.md";
pub const RESULTS_FILE: &str = "results.json";
pub const CODE_DIR: &str = "code";
pub const DATA_DIR: &str = "data";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Replication,
    OpenEnded,
    HumanRepo,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Replication => "replication",
            Category::OpenEnded => "open_ended",
            Category::HumanRepo => "human_repo",
        }
    }
}

/// Text of one narrative artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Document(pub String);

impl Document {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for Document {
    fn from(s: &str) -> Self {
        Document(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    NotebookBlock,
    Script,
}

impl UnitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            UnitKind::NotebookBlock => "notebook_block",
            UnitKind::Script => "script",
        }
    }

    pub fn parse(s: &str) -> Option<UnitKind> {
        match s {
            "notebook_block" => Some(UnitKind::NotebookBlock),
            "script" => Some(UnitKind::Script),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeUnit {
    pub index: usize,
    pub kind: UnitKind,
    pub source: String,
    pub recorded_output: Option<String>,
    pub declared_inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataEntry {
    pub path: String,
    pub role: String,
    /// SHA-256 hex of the file content.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
}

/// Named numeric metrics plus free-text conclusions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsManifest {
    #[serde(default)]
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub conclusions: Vec<String>,
}

impl ResultsManifest {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }

    /// Sets a metric, replacing any earlier value with the same name.
    pub fn set(&mut self, name: impl Into<String>, value: f64) {
        let name = name.into();
        match self.metrics.iter_mut().find(|m| m.name == name) {
            Some(m) => m.value = value,
            None => self.metrics.push(Metric { name, value }),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.metrics.iter().map(|m| m.name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResearchBundle {
    /// Directory the bundle was loaded from.
    pub root: PathBuf,
    pub task_id: String,
    pub category: Category,
    pub has_demo: bool,
    pub proposes_new_method: bool,
    pub prompt: Option<Document>,
    pub plan: Document,
    pub walkthrough: Option<Document>,
    pub report: Document,
    pub code_units: Vec<CodeUnit>,
    pub data_manifest: Vec<DataEntry>,
    pub recorded_results: ResultsManifest,
}
