use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;

use super::{JudgeBackend, JudgeError, JudgeRequest};
use crate::digest::sha256_hex;

/// Deterministic backend answering from a table.
///
/// Keys are tried from most to least specific, with `T` the task id, `I` the
/// item code, `k` the purpose kind (`verdict`, `block`, `propose`, `assess`,
/// `summarize`) and `s` the purpose suffix (`block/3`, `propose/1`):
///
/// ```text
/// T/I/s  T/I/k  T/I  I/s  I/k  I  T/k  */k  *
/// ```
///
/// The bare `T/I` and `I` forms only answer verdict and block requests.
/// Values are strings, or JSON values sent as their compact serialization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedBackend {
    table: BTreeMap<String, String>,
}

impl ScriptedBackend {
    pub fn new(table: BTreeMap<String, String>) -> Self {
        ScriptedBackend { table }
    }

    /// A backend that answers every request with `reply`.
    pub fn constant(reply: impl Into<String>) -> Self {
        ScriptedBackend::new(BTreeMap::from([("*".to_string(), reply.into())]))
    }

    pub fn from_json(text: &str) -> Result<Self, JudgeError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| JudgeError::Backend(format!("judge script: {e}")))?;
        let Value::Object(map) = value else {
            return Err(JudgeError::Backend("judge script must be a JSON object".into()));
        };
        let table = map
            .into_iter()
            .map(|(k, v)| {
                let reply = match v {
                    Value::String(s) => s,
                    other => other.to_string(),
                };
                (k, reply)
            })
            .collect();
        Ok(ScriptedBackend { table })
    }

    pub fn from_file(path: &Path) -> Result<Self, JudgeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| JudgeError::Backend(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn keys(request: &JudgeRequest) -> Vec<String> {
        let t = &request.task_id;
        let k = request.purpose.kind();
        let s = request.purpose.suffix();
        let bare = matches!(k, "verdict" | "block");
        let mut keys = Vec::new();
        if let Some(item) = request.item {
            let i = item.code();
            if let Some(s) = &s {
                keys.push(format!("{t}/{i}/{s}"));
            }
            keys.push(format!("{t}/{i}/{k}"));
            if bare {
                keys.push(format!("{t}/{i}"));
            }
            if let Some(s) = &s {
                keys.push(format!("{i}/{s}"));
            }
            keys.push(format!("{i}/{k}"));
            if bare {
                keys.push(i.to_string());
            }
        }
        keys.push(format!("{t}/{k}"));
        keys.push(format!("*/{k}"));
        keys.push("*".to_string());
        keys
    }
}

impl JudgeBackend for ScriptedBackend {
    fn evaluate(&self, request: &JudgeRequest) -> Result<String, JudgeError> {
        let keys = Self::keys(request);
        keys.iter()
            .find_map(|k| self.table.get(k))
            .cloned()
            .ok_or_else(|| JudgeError::Backend(format!("no scripted reply for {}", keys[0])))
    }

    fn identity(&self) -> String {
        let canonical = serde_json::to_string(&self.table).expect("table serializes");
        format!("scripted:{}", &sha256_hex(canonical.as_bytes())[..16])
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::ViewMode;
    use crate::checklist::ItemId;
    use crate::judge::Purpose;

    fn req(task: &str, item: Option<ItemId>, purpose: Purpose) -> JudgeRequest {
        JudgeRequest {
            task_id: task.into(),
            item,
            purpose,
            view_mode: ViewMode::Full,
            evidence: vec![],
            instructions: String::new(),
        }
    }

    #[test]
    fn most_specific_key_wins() {
        let b = ScriptedBackend::from_json(
            r#"{"*": "default", "C3": "item", "fixA/C3/block/2": "exact", "*/summarize": "sum",
                "C3/block": {"verdict":"PASS","rationale":"r"}}"#,
        )
        .unwrap();
        assert_eq!(b.evaluate(&req("fixA", Some(ItemId::C3), Purpose::Block { index: 2 })).unwrap(), "exact");
        assert_eq!(
            b.evaluate(&req("fixA", Some(ItemId::C3), Purpose::Block { index: 1 })).unwrap(),
            r#"{"rationale":"r","verdict":"PASS"}"#
        );
        assert_eq!(b.evaluate(&req("fixB", Some(ItemId::C3), Purpose::Verdict)).unwrap(), "item");
        assert_eq!(b.evaluate(&req("fixB", Some(ItemId::CS1), Purpose::Verdict)).unwrap(), "default");
        assert_eq!(b.evaluate(&req("fixB", None, Purpose::Summarize)).unwrap(), "sum");
    }

    #[test]
    fn bare_item_key_does_not_answer_proposals() {
        let b = ScriptedBackend::from_json(r#"{"GT1": "verdict-only"}"#).unwrap();
        assert!(b.evaluate(&req("t", Some(ItemId::GT1), Purpose::Propose { trial: 1 })).is_err());
        assert!(b.evaluate(&req("t", Some(ItemId::GT1), Purpose::Assess { trial: 1 })).is_err());
        assert_eq!(b.evaluate(&req("t", Some(ItemId::GT1), Purpose::Verdict)).unwrap(), "verdict-only");
    }

    #[test]
    fn deterministic_and_identified_by_content() {
        let a = ScriptedBackend::constant("x");
        let r = req("t", Some(ItemId::CS1), Purpose::Verdict);
        assert_eq!(a.evaluate(&r).unwrap(), a.evaluate(&r).unwrap());
        assert!(a.is_deterministic());
        assert_eq!(a.identity(), ScriptedBackend::constant("x").identity());
        assert_ne!(a.identity(), ScriptedBackend::constant("y").identity());
    }
}
