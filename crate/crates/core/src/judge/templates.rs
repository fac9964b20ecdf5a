//! Prompt templates: plain text with `{name}` placeholders and an optional
//! `# evidence: kind, kind` header naming the evidence the template wants.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::Serialize;

use super::JudgeError;
use crate::bundle::ArtifactKind;
use crate::digest::sha256_hex;

pub const CONSISTENCY: &str = "consistency";
pub const INSTRUCTION_FOLLOWING: &str = "instruction_following";
pub const EXECUTION_BLOCK: &str = "execution_block";
pub const EXECUTION_STATIC: &str = "execution_static";
pub const REPLICATION_SUMMARY: &str = "replication_summary";
pub const REPLICATION_VERIFY: &str = "replication_verify";
pub const REPRODUCIBILITY: &str = "reproducibility";
pub const GENERALIZABILITY_PROPOSE: &str = "generalizability_propose";
pub const GENERALIZABILITY_ASSESS: &str = "generalizability_assess";
pub const GENERALIZABILITY_STATIC: &str = "generalizability_static";

const BUILTIN: [(&str, &str); 10] = [
    (CONSISTENCY, include_str!("../../templates/consistency.txt")),
    (INSTRUCTION_FOLLOWING, include_str!("../../templates/instruction_following.txt")),
    (EXECUTION_BLOCK, include_str!("../../templates/execution_block.txt")),
    (EXECUTION_STATIC, include_str!("../../templates/execution_static.txt")),
    (REPLICATION_SUMMARY, include_str!("../../templates/replication_summary.txt")),
    (REPLICATION_VERIFY, include_str!("../../templates/replication_verify.txt")),
    (REPRODUCIBILITY, include_str!("../../templates/reproducibility.txt")),
    (GENERALIZABILITY_PROPOSE, include_str!("../../templates/generalizability_propose.txt")),
    (GENERALIZABILITY_ASSESS, include_str!("../../templates/generalizability_assess.txt")),
    (GENERALIZABILITY_STATIC, include_str!("../../templates/generalizability_static.txt")),
];

/// Templates without a checklist item.
const ITEMLESS: [&str; 1] = [REPLICATION_SUMMARY];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Template {
    pub name: String,
    pub body: String,
    pub evidence: Vec<ArtifactKind>,
    /// SHA-256 of the file as read, header included.
    pub digest: String,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("static regex"))
}

impl Template {
    pub fn parse(name: &str, text: &str) -> Result<Template, JudgeError> {
        let mut evidence = Vec::new();
        let mut body_lines = Vec::new();
        let mut in_header = true;
        for line in text.lines() {
            if in_header {
                if let Some(rest) = line.strip_prefix("# evidence:") {
                    for kind in rest.split(',').map(str::trim).filter(|k| !k.is_empty()) {
                        let kind = ArtifactKind::parse(kind).ok_or_else(|| {
                            JudgeError::Template(format!("{name}: unknown evidence kind `{kind}`"))
                        })?;
                        evidence.push(kind);
                    }
                    continue;
                }
                in_header = false;
            }
            body_lines.push(line);
        }
        let body = body_lines.join("\n");
        if !body.contains("{evidence}") {
            return Err(JudgeError::Template(format!("{name}: missing {{evidence}} placeholder")));
        }
        if !ITEMLESS.contains(&name) && !body.contains("{criterion}") {
            return Err(JudgeError::Template(format!("{name}: missing {{criterion}} placeholder")));
        }
        Ok(Template { name: name.to_string(), body, evidence, digest: sha256_hex(text.as_bytes()) })
    }

    /// Expands placeholders in a single pass, so substituted values are never
    /// themselves expanded. Unknown placeholders are left as written.
    pub fn render(&self, vars: &BTreeMap<&str, String>) -> String {
        placeholder_re()
            .replace_all(&self.body, |caps: &regex::Captures<'_>| match vars.get(&caps[1]) {
                Some(v) => v.clone(),
                None => caps[0].to_string(),
            })
            .into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    entries: BTreeMap<String, Template>,
}

impl Templates {
    pub fn builtin() -> Templates {
        let entries = BUILTIN
            .iter()
            .map(|(name, text)| {
                let t = Template::parse(name, text).expect("builtin templates are valid");
                (name.to_string(), t)
            })
            .collect();
        Templates { entries }
    }

    /// Builtin templates, with any `<name>.txt` found in `dir` replacing the
    /// builtin of the same name.
    pub fn with_overrides(dir: &Path) -> Result<Templates, JudgeError> {
        let mut templates = Templates::builtin();
        for (name, _) in BUILTIN {
            let path = dir.join(format!("{name}.txt"));
            match fs::read_to_string(&path) {
                Ok(text) => {
                    templates.entries.insert(name.to_string(), Template::parse(name, &text)?);
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(JudgeError::Template(format!("{}: {e}", path.display()))),
            }
        }
        Ok(templates)
    }

    pub fn get(&self, name: &str) -> &Template {
        self.entries.get(name).unwrap_or_else(|| panic!("unknown template `{name}`"))
    }

    pub fn digests(&self) -> BTreeMap<String, String> {
        self.entries.iter().map(|(k, t)| (k.clone(), t.digest.clone())).collect()
    }
}

impl Default for Templates {
    fn default() -> Self {
        Templates::builtin()
    }
}
