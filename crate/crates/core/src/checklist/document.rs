//! Verdict JSON documents.
//!
//! Layout:
//!
//! ```json
//! {
//!   "task_id": "ioi",
//!   "run_id": 1,
//!   "Checklist": { "CS1_Results_vs_Conclusion": "FAIL", ... },
//!   "Rationale": { "CS1_Results_vs_Conclusion": "...", ... }
//! }
//! ```
//!
//! Serialization is canonical: keys follow checklist order and the output is
//! pretty-printed with a trailing newline, so equal documents are byte-equal.

use std::collections::{BTreeMap, BTreeSet};

use serde::ser::{SerializeMap, SerializeStruct};
use serde::{Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use super::{ItemId, Outcome, Verdict};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DocumentError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub outcome: Outcome,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerdictDocument {
    pub task_id: String,
    pub run_id: u32,
    /// Outcome and rationale share one key set by construction.
    pub entries: BTreeMap<ItemId, Entry>,
}

impl VerdictDocument {
    pub fn new(task_id: impl Into<String>, run_id: u32) -> Self {
        VerdictDocument { task_id: task_id.into(), run_id, entries: BTreeMap::new() }
    }

    pub fn from_verdicts(
        task_id: impl Into<String>,
        run_id: u32,
        verdicts: impl IntoIterator<Item = Verdict>,
    ) -> Self {
        let mut doc = VerdictDocument::new(task_id, run_id);
        for v in verdicts {
            doc.insert(v);
        }
        doc
    }

    pub fn insert(&mut self, verdict: Verdict) {
        self.entries.insert(
            verdict.item_id,
            Entry { outcome: verdict.outcome, rationale: verdict.rationale },
        );
    }

    pub fn outcome(&self, id: ItemId) -> Option<Outcome> {
        self.entries.get(&id).map(|e| e.outcome)
    }

    pub fn item_ids(&self) -> BTreeSet<ItemId> {
        self.entries.keys().copied().collect()
    }

    pub fn verdicts(&self) -> impl Iterator<Item = Verdict> + '_ {
        self.entries.iter().map(|(id, e)| Verdict {
            item_id: *id,
            outcome: e.outcome,
            rationale: e.rationale.clone(),
            run_id: self.run_id,
        })
    }

    pub fn to_json(&self) -> String {
        serialize_verdicts(self)
    }
}

struct Outcomes<'a>(&'a BTreeMap<ItemId, Entry>);
struct Rationales<'a>(&'a BTreeMap<ItemId, Entry>);

impl Serialize for Outcomes<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (id, e) in self.0 {
            map.serialize_entry(id.key(), e.outcome.as_str())?;
        }
        map.end()
    }
}

impl Serialize for Rationales<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (id, e) in self.0 {
            map.serialize_entry(id.key(), &e.rationale)?;
        }
        map.end()
    }
}

impl Serialize for VerdictDocument {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("VerdictDocument", 4)?;
        st.serialize_field("task_id", &self.task_id)?;
        st.serialize_field("run_id", &self.run_id)?;
        st.serialize_field("Checklist", &Outcomes(&self.entries))?;
        st.serialize_field("Rationale", &Rationales(&self.entries))?;
        st.end()
    }
}

pub fn serialize_verdicts(doc: &VerdictDocument) -> String {
    let mut text = serde_json::to_string_pretty(doc).expect("verdict document serializes");
    text.push('\n');
    text
}

pub fn parse_verdicts(text: &str) -> Result<VerdictDocument, DocumentError> {
    let value = parse_json(text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| DocumentError::Schema("top level must be an object".into()))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "task_id" | "run_id" | "Checklist" | "Rationale") {
            return Err(DocumentError::Schema(format!("unknown top-level key `{key}`")));
        }
    }
    let task_id = obj
        .get("task_id")
        .and_then(Value::as_str)
        .ok_or_else(|| DocumentError::Schema("`task_id` must be a string".into()))?;
    let run_id = obj
        .get("run_id")
        .and_then(Value::as_u64)
        .and_then(|n| u32::try_from(n).ok())
        .ok_or_else(|| DocumentError::Schema("`run_id` must be a non-negative integer".into()))?;
    let outcomes = parse_outcome_map(obj.get("Checklist"))?;
    let rationales = parse_rationale_map(obj.get("Rationale"))?;
    let outcome_keys: BTreeSet<_> = outcomes.keys().collect();
    let rationale_keys: BTreeSet<_> = rationales.keys().collect();
    if outcome_keys != rationale_keys {
        let missing: Vec<_> = outcome_keys
            .symmetric_difference(&rationale_keys)
            .map(|id| id.key())
            .collect();
        return Err(DocumentError::Schema(format!(
            "Checklist and Rationale key sets differ: {}",
            missing.join(", ")
        )));
    }
    let mut entries = BTreeMap::new();
    for (id, outcome) in outcomes {
        let rationale = rationales[&id].clone();
        entries.insert(id, Entry { outcome, rationale });
    }
    Ok(VerdictDocument { task_id: task_id.to_string(), run_id, entries })
}

pub(crate) fn parse_json(text: &str) -> Result<Value, DocumentError> {
    serde_json::from_str(text).map_err(|e| DocumentError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub(crate) fn parse_item_key(key: &str) -> Result<ItemId, DocumentError> {
    ItemId::from_key(key).ok_or_else(|| DocumentError::Schema(format!("unknown item key `{key}`")))
}

pub(crate) fn parse_outcome_map(
    value: Option<&Value>,
) -> Result<BTreeMap<ItemId, Outcome>, DocumentError> {
    let map = value
        .and_then(Value::as_object)
        .ok_or_else(|| DocumentError::Schema("`Checklist` must be an object".into()))?;
    let mut out = BTreeMap::new();
    for (key, v) in map {
        let id = parse_item_key(key)?;
        let outcome = v
            .as_str()
            .and_then(|s| s.parse::<Outcome>().ok())
            .ok_or_else(|| {
                DocumentError::Schema(format!("outcome for `{key}` must be PASS, FAIL or NA"))
            })?;
        out.insert(id, outcome);
    }
    Ok(out)
}

pub(crate) fn parse_rationale_map(value: Option<&Value>) -> Result<BTreeMap<ItemId, String>, DocumentError> {
    let map = value
        .and_then(Value::as_object)
        .ok_or_else(|| DocumentError::Schema("`Rationale` must be an object".into()))?;
    let mut out = BTreeMap::new();
    for (key, v) in map {
        let id = parse_item_key(key)?;
        let text = v
            .as_str()
            .ok_or_else(|| DocumentError::Schema(format!("rationale for `{key}` must be a string")))?;
        out.insert(id, text.to_string());
    }
    Ok(out)
}
