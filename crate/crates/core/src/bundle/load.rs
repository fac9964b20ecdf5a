use std::fs;
use std::path::{Component, Path, PathBuf};

use regex::Regex;
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;
use walkdir::WalkDir;

use super::validate::{validate, ValidationReport};
use super::*;
use crate::digest;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("missing artifact: {name} ({file})")]
    MissingArtifact { name: String, file: String },
    #[error("malformed {file}{}: {message}", position(.line, .column))]
    MalformedManifest {
        file: String,
        line: Option<usize>,
        column: Option<usize>,
        message: String,
    },
    #[error("path escapes bundle root: {0}")]
    PathEscape(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("bundle is invalid:\n{0}")]
    Invalid(ValidationReport),
}

fn position(line: &Option<usize>, column: &Option<usize>) -> String {
    match (line, column) {
        (Some(l), Some(c)) => format!(" at line {l}, column {c}"),
        (Some(l), None) => format!(" at line {l}"),
        _ => String::new(),
    }
}

impl BundleError {
    fn missing(name: &str, file: &str) -> Self {
        BundleError::MissingArtifact { name: name.to_string(), file: file.to_string() }
    }

    fn io(path: &Path, err: std::io::Error) -> Self {
        BundleError::Io { path: path.display().to_string(), message: err.to_string() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestToml {
    task_id: String,
    category: Category,
    #[serde(default)]
    has_demo: bool,
    #[serde(default)]
    proposes_new_method: bool,
    #[serde(default)]
    data: Vec<DataToml>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataToml {
    path: String,
    #[serde(default = "default_role")]
    role: String,
    sha256: Option<String>,
}

fn default_role() -> String {
    "data".to_string()
}

/// Joins a bundle-relative path onto `root`, rejecting absolute paths,
/// `..` components and symlinks that resolve outside the root.
pub fn safe_join(root: &Path, rel: &str) -> Result<PathBuf, BundleError> {
    let rel_path = Path::new(rel);
    if rel.is_empty() {
        return Err(BundleError::PathEscape(rel.to_string()));
    }
    for comp in rel_path.components() {
        match comp {
            Component::Normal(_) | Component::CurDir => {}
            _ => return Err(BundleError::PathEscape(rel.to_string())),
        }
    }
    let joined = root.join(rel_path);
    if let Ok(real) = joined.canonicalize() {
        let real_root = root.canonicalize().map_err(|e| BundleError::io(root, e))?;
        if !real.starts_with(&real_root) {
            return Err(BundleError::PathEscape(rel.to_string()));
        }
    }
    Ok(joined)
}

fn read_text(root: &Path, file: &str) -> Result<Option<String>, BundleError> {
    let path = safe_join(root, file)?;
    match fs::read_to_string(&path) {
        Ok(text) => Ok(Some(text)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(BundleError::io(&path, e)),
    }
}

fn require_text(root: &Path, name: &str, file: &str) -> Result<String, BundleError> {
    read_text(root, file)?.ok_or_else(|| BundleError::missing(name, file))
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map(|l| l.chars().count()).unwrap_or(0) + 1;
    (line, column)
}

/// Loads a bundle and rejects it if validation reports any error.
pub fn load_bundle(root: &Path) -> Result<ResearchBundle, BundleError> {
    let bundle = load_bundle_unchecked(root)?;
    let report = validate(&bundle);
    if report.is_valid() {
        Ok(bundle)
    } else {
        Err(BundleError::Invalid(report))
    }
}

/// Loads the on-disk layout without running invariant validation.
pub fn load_bundle_unchecked(root: &Path) -> Result<ResearchBundle, BundleError> {
    if !root.is_dir() {
        return Err(BundleError::Io {
            path: root.display().to_string(),
            message: "not a directory".into(),
        });
    }
    let manifest_text = require_text(root, "bundle", MANIFEST_FILE)?;
    let manifest: ManifestToml = toml::from_str(&manifest_text).map_err(|e| {
        let (line, column) = match e.span() {
            Some(span) => {
                let (l, c) = line_col(&manifest_text, span.start);
                (Some(l), Some(c))
            }
            None => (None, None),
        };
        BundleError::MalformedManifest {
            file: MANIFEST_FILE.into(),
            line,
            column,
            message: e.message().to_string(),
        }
    })?;

    let prompt = read_text(root, PROMPT_FILE)?.map(Document);
    let plan = Document(require_text(root, "plan", PLAN_FILE)?);
    let walkthrough = read_text(root, WALKTHROUGH_FILE)?.map(Document);
    let report = Document(require_text(root, "report", REPORT_FILE)?);
    let recorded_results = load_results(root)?;
    let code_units = load_code_units(root)?;
    let data_manifest = load_data(root, &manifest.data)?;

    Ok(ResearchBundle {
        root: root.to_path_buf(),
        task_id: manifest.task_id,
        category: manifest.category,
        has_demo: manifest.has_demo,
        proposes_new_method: manifest.proposes_new_method,
        prompt,
        plan,
        walkthrough,
        report,
        code_units,
        data_manifest,
        recorded_results,
    })
}

fn load_results(root: &Path) -> Result<ResultsManifest, BundleError> {
    let text = require_text(root, "results", RESULTS_FILE)?;
    parse_results_manifest(&text, RESULTS_FILE)
}

/// Parses a `results.json` document; `file` names it in errors.
pub(crate) fn parse_results_manifest(text: &str, file: &str) -> Result<ResultsManifest, BundleError> {
    serde_json::from_str(text).map_err(|e| BundleError::MalformedManifest {
        file: file.into(),
        line: Some(e.line()),
        column: Some(e.column()),
        message: e.to_string(),
    })
}

fn load_code_units(root: &Path) -> Result<Vec<CodeUnit>, BundleError> {
    let code_dir = safe_join(root, CODE_DIR)?;
    if !code_dir.is_dir() {
        return Err(BundleError::missing("code", CODE_DIR));
    }
    let unit_re = Regex::new(r"^(\d{3})_([a-z_]+)\.txt$").expect("static regex");
    let mut entries: Vec<_> = fs::read_dir(&code_dir)
        .map_err(|e| BundleError::io(&code_dir, e))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| BundleError::io(&code_dir, e))?
        .into_iter()
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    entries.sort();

    let notebooks: Vec<_> = entries.iter().filter(|n| n.ends_with(".ipynb")).collect();
    let texts: Vec<_> = entries.iter().filter(|n| unit_re.is_match(n)).collect();
    if !notebooks.is_empty() && !texts.is_empty() {
        return Err(BundleError::MalformedManifest {
            file: CODE_DIR.into(),
            line: None,
            column: None,
            message: "code/ mixes a notebook with NNN_<kind>.txt units".into(),
        });
    }
    if notebooks.len() > 1 {
        return Err(BundleError::MalformedManifest {
            file: CODE_DIR.into(),
            line: None,
            column: None,
            message: "code/ holds more than one notebook".into(),
        });
    }
    if let Some(nb) = notebooks.first() {
        let rel = format!("{CODE_DIR}/{nb}");
        let text = require_text(root, "code", &rel)?;
        return split_notebook(&text, &rel);
    }

    let mut units = Vec::new();
    for name in texts {
        let caps = unit_re.captures(name).expect("matched above");
        let index: usize = caps[1].parse().expect("three digits");
        let kind = UnitKind::parse(&caps[2]).ok_or_else(|| BundleError::MalformedManifest {
            file: format!("{CODE_DIR}/{name}"),
            line: None,
            column: None,
            message: format!("unknown unit kind `{}`", &caps[2]),
        })?;
        if units.iter().any(|u: &CodeUnit| u.index == index) {
            return Err(BundleError::MalformedManifest {
                file: format!("{CODE_DIR}/{name}"),
                line: None,
                column: None,
                message: format!("duplicate unit index {index:03}"),
            });
        }
        let stem = name.trim_end_matches(".txt");
        let source = require_text(root, "code", &format!("{CODE_DIR}/{name}"))?;
        let recorded_output = read_text(root, &format!("{CODE_DIR}/{stem}.out"))?;
        let declared_inputs = match read_text(root, &format!("{CODE_DIR}/{stem}.inputs"))? {
            Some(text) => {
                let mut inputs = Vec::new();
                for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
                    safe_join(root, line)?;
                    inputs.push(line.to_string());
                }
                inputs
            }
            None => Vec::new(),
        };
        units.push(CodeUnit { index, kind, source, recorded_output, declared_inputs });
    }
    units.sort_by_key(|u| u.index);
    Ok(units)
}

fn join_source(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts.iter().filter_map(Value::as_str).collect(),
        _ => String::new(),
    }
}

/// Splits a Jupyter notebook into units, one per non-empty code cell.
fn split_notebook(text: &str, file: &str) -> Result<Vec<CodeUnit>, BundleError> {
    let nb: Value = serde_json::from_str(text).map_err(|e| BundleError::MalformedManifest {
        file: file.into(),
        line: Some(e.line()),
        column: Some(e.column()),
        message: e.to_string(),
    })?;
    let cells = nb.get("cells").and_then(Value::as_array).ok_or_else(|| {
        BundleError::MalformedManifest {
            file: file.into(),
            line: None,
            column: None,
            message: "notebook has no `cells` array".into(),
        }
    })?;
    let mut units = Vec::new();
    for cell in cells {
        if cell.get("cell_type").and_then(Value::as_str) != Some("code") {
            continue;
        }
        let source = cell.get("source").map(join_source).unwrap_or_default();
        if source.trim().is_empty() {
            continue;
        }
        let mut output = String::new();
        for out in cell.get("outputs").and_then(Value::as_array).into_iter().flatten() {
            match out.get("output_type").and_then(Value::as_str) {
                Some("stream") => output.push_str(&out.get("text").map(join_source).unwrap_or_default()),
                Some("execute_result") | Some("display_data") => {
                    if let Some(t) = out.get("data").and_then(|d| d.get("text/plain")) {
                        output.push_str(&join_source(t));
                        output.push('\n');
                    }
                }
                Some("error") => {
                    let ename = out.get("ename").and_then(Value::as_str).unwrap_or("Error");
                    let evalue = out.get("evalue").and_then(Value::as_str).unwrap_or("");
                    output.push_str(&format!("{ename}: {evalue}\n"));
                }
                _ => {}
            }
        }
        units.push(CodeUnit {
            index: units.len(),
            kind: UnitKind::NotebookBlock,
            source,
            recorded_output: (!output.is_empty()).then_some(output),
            declared_inputs: Vec::new(),
        });
    }
    Ok(units)
}

fn load_data(root: &Path, declared: &[DataToml]) -> Result<Vec<DataEntry>, BundleError> {
    let mut entries = Vec::new();
    if declared.is_empty() {
        let data_dir = safe_join(root, DATA_DIR)?;
        if !data_dir.is_dir() {
            return Ok(entries);
        }
        let real_root = root.canonicalize().map_err(|e| BundleError::io(root, e))?;
        for entry in WalkDir::new(&data_dir).follow_links(false).sort_by_file_name() {
            let entry = entry.map_err(|e| BundleError::Io {
                path: data_dir.display().to_string(),
                message: e.to_string(),
            })?;
            let ft = entry.file_type();
            let rel = entry
                .path()
                .strip_prefix(root)
                .expect("walk stays under root")
                .to_string_lossy()
                .replace('\\', "/");
            if ft.is_symlink() {
                let target = entry.path().canonicalize().map_err(|e| BundleError::io(entry.path(), e))?;
                if !target.starts_with(&real_root) {
                    return Err(BundleError::PathEscape(rel));
                }
            }
            if !entry.path().is_file() {
                continue;
            }
            let checksum = digest::sha256_file(entry.path()).map_err(|e| BundleError::io(entry.path(), e))?;
            entries.push(DataEntry { path: rel, role: default_role(), checksum });
        }
        return Ok(entries);
    }
    for d in declared {
        let path = safe_join(root, &d.path)?;
        if !path.is_file() {
            return Err(BundleError::missing("data", &d.path));
        }
        let actual = digest::sha256_file(&path).map_err(|e| BundleError::io(&path, e))?;
        if let Some(expected) = &d.sha256 {
            if !expected.eq_ignore_ascii_case(&actual) {
                return Err(BundleError::MalformedManifest {
                    file: MANIFEST_FILE.into(),
                    line: None,
                    column: None,
                    message: format!("checksum mismatch for {}", d.path),
                });
            }
        }
        entries.push(DataEntry { path: d.path.clone(), role: d.role.clone(), checksum: actual });
    }
    Ok(entries)
}
