//! Wire formats shared with the runner shim.
//!
//! The shim is started as `runner --manifest <path>` and writes one JSON
//! object per line on stdout with exactly the fields `unit`, `phase`,
//! `payload` and `t_ms`. Phases are `start|stdout|stderr|error|end|fatal`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bundle::UnitKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Start,
    Stdout,
    Stderr,
    Error,
    End,
    Fatal,
}

/// One line of the runner event stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireEvent {
    /// `None` only for `fatal` events that are not tied to a unit.
    pub unit: Option<usize>,
    pub phase: Phase,
    pub payload: String,
    pub t_ms: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid event line: {0}")]
pub struct EventParseError(pub String);

const FIELDS: [&str; 4] = ["unit", "phase", "payload", "t_ms"];

impl WireEvent {
    pub fn new(unit: usize, phase: Phase, payload: impl Into<String>, t_ms: u64) -> Self {
        WireEvent { unit: Some(unit), phase, payload: payload.into(), t_ms }
    }

    /// Strict parse: the object must carry exactly the four protocol fields.
    pub fn parse_line(line: &str) -> Result<WireEvent, EventParseError> {
        let value: Value =
            serde_json::from_str(line).map_err(|e| EventParseError(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| EventParseError("event is not a JSON object".into()))?;
        if obj.len() != FIELDS.len() || !FIELDS.iter().all(|f| obj.contains_key(*f)) {
            let keys: Vec<_> = obj.keys().map(String::as_str).collect();
            return Err(EventParseError(format!(
                "expected fields {{unit, phase, payload, t_ms}}, got {{{}}}",
                keys.join(", ")
            )));
        }
        let event: WireEvent =
            serde_json::from_value(value).map_err(|e| EventParseError(e.to_string()))?;
        if event.unit.is_none() && event.phase != Phase::Fatal {
            return Err(EventParseError("`unit` may be null only on fatal events".into()));
        }
        Ok(event)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    #[default]
    SharedSession,
    IsolatedPerUnit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorPolicy {
    #[default]
    ContinueOnError,
    AbortOnError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestUnit {
    pub index: usize,
    pub kind: UnitKind,
    pub source_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LimitsEcho {
    pub per_unit_timeout_secs: u64,
    pub error_policy: ErrorPolicy,
}

/// The file handed to the shim with `--manifest`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitManifest {
    pub workspace_root: PathBuf,
    pub units: Vec<ManifestUnit>,
    pub session_mode: SessionMode,
    pub limits: LimitsEcho,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_valid_line() {
        let e = WireEvent::parse_line(r#"{"unit":1,"phase":"stdout","payload":"1\n","t_ms":12}"#).unwrap();
        assert_eq!(e, WireEvent::new(1, Phase::Stdout, "1\n", 12));
    }

    #[test]
    fn fatal_may_have_null_unit() {
        let e = WireEvent::parse_line(r#"{"unit":null,"phase":"fatal","payload":"bad manifest","t_ms":0}"#).unwrap();
        assert_eq!(e.unit, None);
        assert!(WireEvent::parse_line(r#"{"unit":null,"phase":"end","payload":"","t_ms":0}"#).is_err());
    }

    #[test]
    fn rejects_extra_or_missing_fields() {
        assert!(WireEvent::parse_line(r#"{"unit":0,"phase":"start","payload":"","t_ms":0,"x":1}"#).is_err());
        assert!(WireEvent::parse_line(r#"{"unit":0,"phase":"start","payload":""}"#).is_err());
        assert!(WireEvent::parse_line(r#"{"unit":0,"phase":"begin","payload":"","t_ms":0}"#).is_err());
        assert!(WireEvent::parse_line("not json").is_err());
    }

    #[test]
    fn line_round_trip() {
        let e = WireEvent::new(3, Phase::Error, "Traceback...\nValueError: x", 99);
        assert_eq!(WireEvent::parse_line(&e.to_line()).unwrap(), e);
        assert_eq!(
            WireEvent::new(0, Phase::End, "", 1).to_line(),
            r#"{"unit":0,"phase":"end","payload":"","t_ms":1}"#
        );
    }

    #[test]
    fn manifest_field_names() {
        let m = UnitManifest {
            workspace_root: "/ws".into(),
            units: vec![ManifestUnit { index: 0, kind: UnitKind::NotebookBlock, source_path: "/ws/u0".into() }],
            session_mode: SessionMode::SharedSession,
            limits: LimitsEcho { per_unit_timeout_secs: 600, error_policy: ErrorPolicy::ContinueOnError },
        };
        let v: Value = serde_json::to_value(&m).unwrap();
        assert_eq!(v["session_mode"], "shared_session");
        assert_eq!(v["units"][0]["kind"], "notebook_block");
        assert_eq!(v["limits"]["error_policy"], "continue_on_error");
    }
}
