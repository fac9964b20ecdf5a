//! Judgement backends and the orchestration around them.
//!
//! Evaluators hand the [`Judge`] a view, an item, a template and evidence
//! excerpts. The judge checks that every excerpt is visible in the view,
//! renders the template, calls the backend and parses the reply strictly.
//! Every failure after retries turns into a FAIL verdict.

mod evidence;
mod remote;
mod scripted;
pub mod templates;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use evidence::{transcript_excerpts, view_excerpts};
pub use remote::{RemoteBackend, RemoteConfig};
pub use scripted::ScriptedBackend;
pub use templates::{Template, Templates};

use crate::bundle::{ArtifactKind, BundleView, ViewMode};
use crate::checklist::{ChecklistItem, ItemId, Outcome, Verdict};

pub const DEFAULT_MAX_RETRIES: u32 = 2;
pub const PROTOCOL_FAILURE: &str = "judge protocol failure";
pub const BACKEND_FAILURE: &str = "judge backend failure";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JudgeError {
    #[error("redaction violation: {artifact} evidence is not visible under {mode}")]
    RedactionViolation { artifact: ArtifactKind, mode: &'static str },
    #[error("unparseable judgement: {0}")]
    UnparseableJudgement(String),
    #[error("network error: {0}")]
    NetworkError(String),
    #[error("authentication rejected: {0}")]
    AuthError(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("template error: {0}")]
    Template(String),
}

impl JudgeError {
    /// Errors that abort the run instead of being recorded as FAIL.
    pub fn is_fatal(&self) -> bool {
        matches!(self, JudgeError::RedactionViolation { .. } | JudgeError::Template(_))
    }
}

/// What a request asks the backend to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Purpose {
    /// A task-level verdict on the item.
    Verdict,
    /// A verdict on one code block.
    Block { index: usize },
    /// Propose a generalization probe for trial `trial` (1-based).
    Propose { trial: u32 },
    /// Assess the outcome of a probe.
    Assess { trial: u32 },
    /// Free-text documentation of a replication.
    Summarize,
}

impl Purpose {
    pub fn kind(self) -> &'static str {
        match self {
            Purpose::Verdict => "verdict",
            Purpose::Block { .. } => "block",
            Purpose::Propose { .. } => "propose",
            Purpose::Assess { .. } => "assess",
            Purpose::Summarize => "summarize",
        }
    }

    /// Lookup suffix used by the scripted backend, e.g. `block/3`.
    pub fn suffix(self) -> Option<String> {
        match self {
            Purpose::Block { index } => Some(format!("block/{index}")),
            Purpose::Propose { trial } => Some(format!("propose/{trial}")),
            Purpose::Assess { trial } => Some(format!("assess/{trial}")),
            Purpose::Verdict | Purpose::Summarize => None,
        }
    }

    fn note(self) -> String {
        match self {
            Purpose::Block { index } => format!("Evaluate block {index} only; other blocks are context."),
            Purpose::Propose { trial } | Purpose::Assess { trial } => {
                format!("This is trial {trial} of at most 3.")
            }
            Purpose::Verdict | Purpose::Summarize => String::new(),
        }
    }
}

/// A labeled piece of evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excerpt {
    pub artifact: ArtifactKind,
    pub locator: String,
    pub text: String,
}

impl Excerpt {
    pub fn new(artifact: ArtifactKind, locator: impl Into<String>, text: impl Into<String>) -> Self {
        Excerpt { artifact, locator: locator.into(), text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub task_id: String,
    /// `None` for requests that are not about one item (summaries).
    pub item: Option<ItemId>,
    pub purpose: Purpose,
    pub view_mode: ViewMode,
    pub evidence: Vec<Excerpt>,
    /// The fully expanded prompt, evidence included.
    pub instructions: String,
}

pub trait JudgeBackend: Send + Sync {
    fn evaluate(&self, request: &JudgeRequest) -> Result<String, JudgeError>;
    fn identity(&self) -> String;
    fn is_deterministic(&self) -> bool;
}

fn render_evidence(evidence: &[Excerpt]) -> String {
    let mut out = String::new();
    for e in evidence {
        let _ = writeln!(out, "=== {} | {} ===", e.artifact, e.locator);
        out.push_str(e.text.trim_end());
        out.push_str("\n\n");
    }
    out
}

/// Builds a request, refusing evidence from artifacts the view hides.
pub fn assemble_request(
    view: &BundleView,
    item: Option<&ChecklistItem>,
    purpose: Purpose,
    template: &Template,
    evidence: Vec<Excerpt>,
) -> Result<JudgeRequest, JudgeError> {
    if let Some(bad) = evidence.iter().find(|e| !view.is_visible(e.artifact)) {
        return Err(JudgeError::RedactionViolation { artifact: bad.artifact, mode: view.mode().as_str() });
    }
    let mut vars = BTreeMap::from([
        ("task_id", view.task_id().to_string()),
        ("view_mode", view.mode().as_str().to_string()),
        ("purpose_note", purpose.note()),
        ("evidence", render_evidence(&evidence)),
    ]);
    if let Some(item) = item {
        vars.insert("item_id", item.code.to_string());
        vars.insert("item_key", item.key.to_string());
        vars.insert("criterion", item.text.to_string());
        vars.insert("dimension", item.dimension.as_str().to_string());
        vars.insert("aspect", item.aspect.as_str().to_string());
    }
    let instructions = template.render(&vars);
    if let Some(item) = item {
        debug_assert!(instructions.contains(item.text));
    }
    Ok(JudgeRequest {
        task_id: view.task_id().to_string(),
        item: item.map(|i| i.id),
        purpose,
        view_mode: view.mode(),
        evidence,
        instructions,
    })
}

fn extract_object(raw: &str) -> Option<serde_json::Map<String, Value>> {
    let trimmed = raw.trim();
    if let Ok(Value::Object(m)) = serde_json::from_str(trimmed) {
        return Some(m);
    }
    // First balanced `{...}` that parses as an object.
    for (start, _) in trimmed.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&trimmed[start..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(m))) = stream.next() {
            return Some(m);
        }
    }
    None
}

/// Parses a backend reply into a PASS/FAIL verdict.
///
/// Strict mode accepts only a bare object with exactly `verdict` and
/// `rationale`. Lenient mode also accepts an object embedded in other text.
pub fn parse_judgement(raw: &str, item: ItemId, run_id: u32, strict: bool) -> Result<Verdict, JudgeError> {
    let bad = |why: &str| JudgeError::UnparseableJudgement(why.to_string());
    let obj = if strict {
        match serde_json::from_str::<Value>(raw.trim()) {
            Ok(Value::Object(m)) => m,
            _ => return Err(bad("reply is not a single JSON object")),
        }
    } else {
        extract_object(raw).ok_or_else(|| bad("no JSON object in reply"))?
    };
    if strict && obj.len() != 2 {
        return Err(bad("object must have exactly `verdict` and `rationale`"));
    }
    let outcome = match obj.get("verdict").and_then(Value::as_str) {
        Some("PASS") => Outcome::Pass,
        Some("FAIL") => Outcome::Fail,
        Some(other) => return Err(bad(&format!("verdict `{other}` is not PASS or FAIL"))),
        None => return Err(bad("missing string field `verdict`")),
    };
    let rationale = match obj.get("rationale").and_then(Value::as_str) {
        Some(r) if !r.trim().is_empty() => r.trim().to_string(),
        _ => return Err(bad("missing or empty `rationale`")),
    };
    Ok(Verdict { item_id: item, outcome, rationale, run_id })
}

/// Counting semaphore bounding concurrent backend calls.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.free.lock().expect("limiter lock");
            while *free == 0 {
                free = self.cv.wait(free).expect("limiter lock");
            }
            *free -= 1;
        }
        let out = f();
        *self.free.lock().expect("limiter lock") += 1;
        self.cv.notify_one();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JudgeSettings {
    pub max_retries: u32,
    pub concurrency: usize,
    pub strict: bool,
}

impl Default for JudgeSettings {
    fn default() -> Self {
        JudgeSettings { max_retries: DEFAULT_MAX_RETRIES, concurrency: 4, strict: true }
    }
}

/// A backend plus templates, retry policy and a concurrency bound. Cheap to
/// clone; clones share the limiter.
#[derive(Clone)]
pub struct Judge {
    backend: Arc<dyn JudgeBackend>,
    templates: Arc<Templates>,
    settings: JudgeSettings,
    limiter: Arc<Limiter>,
}

impl Judge {
    pub fn new(backend: Arc<dyn JudgeBackend>, templates: Templates, settings: JudgeSettings) -> Self {
        Judge {
            backend,
            templates: Arc::new(templates),
            limiter: Arc::new(Limiter::new(settings.concurrency)),
            settings,
        }
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    pub fn backend_identity(&self) -> String {
        self.backend.identity()
    }

    pub fn is_deterministic(&self) -> bool {
        self.backend.is_deterministic()
    }

    /// Calls the backend until `parse` accepts a reply or retries run out.
    /// The inner error is the fail-closed rationale.
    pub fn ask<T>(
        &self,
        request: &JudgeRequest,
        parse: impl Fn(&str) -> Result<T, JudgeError>,
    ) -> Result<T, String> {
        let mut last = String::new();
        for attempt in 0..=self.settings.max_retries {
            let reply = self.limiter.run(|| self.backend.evaluate(request));
            let err = match reply.and_then(|raw| parse(&raw)) {
                Ok(v) => return Ok(v),
                Err(e) => e,
            };
            tracing::debug!(attempt, item = ?request.item, "judge call failed: {err}");
            last = match &err {
                JudgeError::UnparseableJudgement(why) => format!("{PROTOCOL_FAILURE}: {why}"),
                other => format!("{BACKEND_FAILURE}: {other}"),
            };
            if matches!(err, JudgeError::AuthError(_)) {
                break;
            }
        }
        Err(last)
    }

    pub fn request(
        &self,
        view: &BundleView,
        item: Option<ItemId>,
        purpose: Purpose,
        template: &str,
        evidence: Vec<Excerpt>,
    ) -> Result<JudgeRequest, JudgeError> {
        assemble_request(view, item.map(ItemId::item), purpose, self.templates.get(template), evidence)
    }

    /// A PASS/FAIL verdict, failing closed. Only redaction and template
    /// errors escape.
    pub fn verdict(
        &self,
        view: &BundleView,
        item: ItemId,
        purpose: Purpose,
        template: &str,
        evidence: Vec<Excerpt>,
        run_id: u32,
    ) -> Result<Verdict, JudgeError> {
        let request = self.request(view, Some(item), purpose, template, evidence)?;
        let strict = self.settings.strict;
        Ok(self
            .ask(&request, |raw| parse_judgement(raw, item, run_id, strict))
            .unwrap_or_else(|why| Verdict::fail(item, why, run_id)))
    }
}

/// Accepts plain text or `{"summary": "..."}`.
pub fn parse_summary(raw: &str) -> Result<String, JudgeError> {
    if let Ok(Value::Object(m)) = serde_json::from_str::<Value>(raw.trim()) {
        if let Some(s) = m.get("summary").and_then(Value::as_str) {
            if !s.trim().is_empty() {
                return Ok(s.trim().to_string());
            }
        }
    }
    let text = raw.trim();
    if text.is_empty() {
        return Err(JudgeError::UnparseableJudgement("empty summary".into()));
    }
    Ok(text.to_string())
}
