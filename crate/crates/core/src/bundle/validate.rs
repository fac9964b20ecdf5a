use std::collections::BTreeSet;
use std::fmt;
use std::path::{Component, Path};

use serde::{Deserialize, Serialize};

use super::{Category, ResearchBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub severity: Severity,
    pub message: String,
}

/// Every invariant violation found in a bundle. Warnings do not make a bundle
/// invalid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.iter().all(|v| v.severity == Severity::Warning)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity == Severity::Error)
    }

    fn error(&mut self, message: impl Into<String>) {
        self.violations.push(Violation { severity: Severity::Error, message: message.into() });
    }

    fn warning(&mut self, message: impl Into<String>) {
        self.violations.push(Violation { severity: Severity::Warning, message: message.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "valid");
        }
        for v in &self.violations {
            let tag = match v.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            writeln!(f, "{tag}: {}", v.message)?;
        }
        Ok(())
    }
}

fn escapes(rel: &str) -> bool {
    rel.is_empty()
        || Path::new(rel)
            .components()
            .any(|c| !matches!(c, Component::Normal(_) | Component::CurDir))
}

pub fn validate(bundle: &ResearchBundle) -> ValidationReport {
    let mut report = ValidationReport::default();

    if bundle.task_id.trim().is_empty() {
        report.error("task_id is empty");
    }
    match bundle.category {
        Category::Replication | Category::OpenEnded => {
            if bundle.prompt.is_none() {
                report.error(format!(
                    "prompt.md is required for {} tasks",
                    bundle.category.as_str()
                ));
            }
        }
        Category::HumanRepo => {
            if bundle.prompt.is_some() {
                report.warning("prompt ignored for HumanRepo");
            }
        }
    }
    if bundle.report.as_str().trim().is_empty() {
        report.error("report.md is empty");
    }

    if bundle.code_units.is_empty() {
        report.error("bundle has no code units");
    }
    for (pos, unit) in bundle.code_units.iter().enumerate() {
        if unit.index != pos {
            report.error(format!(
                "code unit indices are not contiguous: expected {pos}, found {}",
                unit.index
            ));
            break;
        }
    }
    for unit in &bundle.code_units {
        if unit.source.trim().is_empty() {
            report.error(format!("code unit {} has an empty source", unit.index));
        }
        for input in &unit.declared_inputs {
            if escapes(input) {
                report.error(format!("code unit {} declares input outside the bundle: {input}", unit.index));
            }
        }
    }

    for entry in &bundle.data_manifest {
        if escapes(&entry.path) {
            report.error(format!("data path escapes the bundle root: {}", entry.path));
        }
    }

    let mut seen = BTreeSet::new();
    let mut dups = BTreeSet::new();
    for name in bundle.recorded_results.names() {
        if !seen.insert(name) {
            dups.insert(name);
        }
    }
    for name in dups {
        report.error(format!("duplicate metric name in recorded_results: {name}"));
    }
    if bundle.recorded_results.metrics.is_empty() {
        report.error(
            "results.json has no metrics; result fidelity needs machine-readable metrics, not free text only",
        );
    }
    for m in &bundle.recorded_results.metrics {
        if !m.value.is_finite() {
            report.error(format!("metric {} is not a finite number", m.name));
        }
    }

    report
}
