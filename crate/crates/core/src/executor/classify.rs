use std::sync::OnceLock;

use regex::RegexSet;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    EnvironmentOrDependency,
    ShapeMismatch,
    MissingFileOrKey,
    Timeout,
    Other,
}

impl ErrorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::EnvironmentOrDependency => "environment_or_dependency",
            ErrorClass::ShapeMismatch => "shape_mismatch",
            ErrorClass::MissingFileOrKey => "missing_file_or_key",
            ErrorClass::Timeout => "timeout",
            ErrorClass::Other => "other",
        }
    }
}

// Ordered rules; the first class with a matching pattern wins.
const RULES: &[(ErrorClass, &[&str])] = &[
    (
        ErrorClass::EnvironmentOrDependency,
        &[
            r"ModuleNotFoundError",
            r"ImportError",
            r"No module named",
            r"cannot import name",
            r"command not found",
            r"(?m)^\S+: \d+: \S+: not found$",
            r"failed to start interpreter",
            r"DLL load failed",
            r"(?i)version conflict",
            r"(?i)requires .* but .* is installed",
            r"(?i)CUDA (error|out of memory|driver)",
            r"(?i)(can't|cannot|unable to) load (the )?(model|tokenizer|weights|config)",
            r"OSError: .*(model|tokenizer|checkpoint)",
            r"(?i)no such (command|program)",
        ],
    ),
    (
        ErrorClass::ShapeMismatch,
        &[
            r"(?i)shape mismatch",
            r"(?i)size mismatch",
            r"(?i)dimension mismatch",
            r"(?i)could not be broadcast",
            r"(?i)mismatch in its core dimension",
            r"(?i)shapes?\b.*cannot be multiplied",
            r"(?i)must match the size of tensor",
            r"(?i)dimension out of range",
            r"(?i)expected .* dimensions?, got",
            r"(?i)cannot reshape array",
            r"(?i)inconsistent (tensor )?sizes?",
        ],
    ),
    (
        ErrorClass::MissingFileOrKey,
        &[
            r"FileNotFoundError",
            r"No such file or directory",
            r"KeyError",
            r"(?i)does not exist",
        ],
    ),
    (ErrorClass::Timeout, &[r"TimeoutError", r"(?i)timed out", r"(?i)deadline exceeded"]),
];

fn rule_sets() -> &'static [(ErrorClass, RegexSet)] {
    static SETS: OnceLock<Vec<(ErrorClass, RegexSet)>> = OnceLock::new();
    SETS.get_or_init(|| {
        RULES
            .iter()
            .map(|(class, pats)| (*class, RegexSet::new(*pats).expect("static patterns")))
            .collect()
    })
}

/// Maps a traceback to an error class by ordered pattern rules.
pub fn classify_error(traceback: &str) -> ErrorClass {
    rule_sets()
        .iter()
        .find(|(_, set)| set.is_match(traceback))
        .map(|(class, _)| *class)
        .unwrap_or(ErrorClass::Other)
}
