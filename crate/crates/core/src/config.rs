//! Run configuration, read from `execeval.toml`.
//!
//! ```toml
//! mode = "full"                   # full | no_execution | doc_only
//! repeats = 3
//! jobs = 1
//! out = "runs"
//! keep_workspaces = false
//! run_id = 1
//!
//! [executor]
//! runner = "subprocess"           # subprocess | shim
//! interpreter = ["python3"]
//! shim_command = ["runner"]
//! session_mode = "shared_session"
//! per_unit_timeout_secs = 600
//! error_policy = "continue_on_error"
//!
//! [judge]
//! backend = "scripted"            # scripted | remote
//! script = "judge.json"
//! max_retries = 2
//! concurrency = 4
//! strict = true
//!
//! [replication]
//! replications = 2
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::ViewMode;
use crate::executor::{ErrorPolicy, ExecLimits, SessionMode, DEFAULT_UNIT_TIMEOUT};
use crate::judge::{JudgeSettings, DEFAULT_MAX_RETRIES};

pub const CONFIG_FILE: &str = "execeval.toml";
pub const MAX_TRIALS: u32 = 3;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed {path}{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { path: String, line: Option<usize>, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Full,
    NoExecution,
    DocOnly,
}

impl RunMode {
    pub fn view_mode(self) -> ViewMode {
        match self {
            RunMode::Full => ViewMode::Full,
            RunMode::NoExecution => ViewMode::NoExecution,
            RunMode::DocOnly => ViewMode::DocOnly,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Full => "full",
            RunMode::NoExecution => "no_execution",
            RunMode::DocOnly => "doc_only",
        }
    }

    pub fn parse(s: &str) -> Option<RunMode> {
        [RunMode::Full, RunMode::NoExecution, RunMode::DocOnly]
            .into_iter()
            .find(|m| m.as_str() == s || m.as_str().replace('_', "-") == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunnerKind {
    #[default]
    Subprocess,
    Shim,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorConfig {
    pub runner: RunnerKind,
    pub interpreter: Vec<String>,
    pub shim_command: Vec<String>,
    pub session_mode: SessionMode,
    pub per_unit_timeout_secs: u64,
    pub error_policy: ErrorPolicy,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig {
            runner: RunnerKind::Subprocess,
            interpreter: vec!["python3".into()],
            shim_command: vec!["runner".into()],
            session_mode: SessionMode::SharedSession,
            per_unit_timeout_secs: DEFAULT_UNIT_TIMEOUT.as_secs(),
            error_policy: ErrorPolicy::ContinueOnError,
        }
    }
}

impl ExecutorConfig {
    pub fn limits(&self) -> ExecLimits {
        ExecLimits { per_unit_timeout: Duration::from_secs(self.per_unit_timeout_secs), policy: self.error_policy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    /// Unset: remote when `JUDGE_ENDPOINT` is set, otherwise an error.
    pub backend: Option<BackendKind>,
    pub script: Option<PathBuf>,
    pub max_retries: u32,
    pub concurrency: usize,
    pub strict: bool,
    /// Overrides `JUDGE_ENDPOINT`.
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: u64,
    /// Directory of template overrides.
    pub templates: Option<PathBuf>,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig {
            backend: None,
            script: None,
            max_retries: DEFAULT_MAX_RETRIES,
            concurrency: 4,
            strict: true,
            endpoint: None,
            model: None,
            timeout_secs: 120,
            templates: None,
        }
    }
}

impl JudgeConfig {
    pub fn settings(&self) -> JudgeSettings {
        JudgeSettings { max_retries: self.max_retries, concurrency: self.concurrency, strict: self.strict }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicationConfig {
    pub replications: u32,
    pub max_trials: u32,
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        ReplicationConfig { replications: 2, max_trials: MAX_TRIALS }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: RunMode,
    pub repeats: u32,
    pub jobs: usize,
    pub out: PathBuf,
    pub keep_workspaces: bool,
    /// Identifier written into every verdict document of the invocation.
    pub run_id: u32,
    /// Where workspaces are created; defaults to the system temp directory.
    pub workspace_dir: Option<PathBuf>,
    pub executor: ExecutorConfig,
    pub judge: JudgeConfig,
    pub replication: ReplicationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: RunMode::Full,
            repeats: 3,
            jobs: 1,
            out: PathBuf::from("runs"),
            keep_workspaces: false,
            run_id: 1,
            workspace_dir: None,
            executor: ExecutorConfig::default(),
            judge: JudgeConfig::default(),
            replication: ReplicationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_string(),
            line: e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1),
            message: e.message().to_string(),
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        let mut cfg = RunConfig::from_toml(&text, &path.display().to_string())?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.out);
        if let Some(p) = self.workspace_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.judge.script.as_mut() {
            fix(p);
        }
        if let Some(p) = self.judge.templates.as_mut() {
            fix(p);
        }
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.repeats == 0 {
            return bad("repeats must be at least 1");
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1");
        }
        if self.executor.per_unit_timeout_secs == 0 {
            return bad("executor.per_unit_timeout_secs must be positive");
        }
        if self.executor.interpreter.is_empty() || self.executor.shim_command.is_empty() {
            return bad("executor commands must not be empty");
        }
        if self.replication.replications == 0 {
            return bad("replication.replications must be at least 1");
        }
        if !(1..=MAX_TRIALS).contains(&self.replication.max_trials) {
            return bad("replication.max_trials must be between 1 and 3");
        }
        if self.judge.concurrency == 0 {
            return bad("judge.concurrency must be at least 1");
        }
        Ok(())
    }

    pub fn workspace_base(&self) -> PathBuf {
        self.workspace_dir.clone().unwrap_or_else(|| std::env::temp_dir().join("execeval-workspaces"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::from_toml("", "execeval.toml").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.repeats, 3);
        assert_eq!(c.executor.limits(), ExecLimits::default());
        assert_eq!(c.judge.max_retries, 2);
        assert_eq!(c.replication.replications, 2);
    }

    #[test]
    fn parses_sections() {
        let c = RunConfig::from_toml(
            "mode = \"doc_only\"\nrepeats = 1\n[executor]\ninterpreter = [\"sh\"]\nper_unit_timeout_secs = 5\nerror_policy = \"abort_on_error\"\n[judge]\nbackend = \"scripted\"\nscript = \"j.json\"\n",
            "x",
        )
        .unwrap();
        assert_eq!(c.mode, RunMode::DocOnly);
        assert_eq!(c.executor.limits().per_unit_timeout, Duration::from_secs(5));
        assert_eq!(c.executor.error_policy, ErrorPolicy::AbortOnError);
        assert_eq!(c.judge.backend, Some(BackendKind::Scripted));
    }

    #[test]
    fn reports_line_of_bad_key() {
        let err = RunConfig::from_toml("repeats = 2\n\nbogus = 1\n", "execeval.toml").unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, Some(3)),
            other => panic!("{other}"),
        }
        assert!(RunConfig::from_toml("repeats = 0", "x").is_err());
        assert!(RunConfig::from_toml("[replication]\nmax_trials = 4", "x").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(CONFIG_FILE);
        std::fs::write(&path, "out = \"o\"\n[judge]\nscript = \"s.json\"\n").unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.out, dir.path().join("o"));
        assert_eq!(c.judge.script, Some(dir.path().join("s.json")));
    }

    #[test]
    fn mode_names() {
        assert_eq!(RunMode::parse("doc-only"), Some(RunMode::DocOnly));
        assert_eq!(RunMode::parse("no_execution"), Some(RunMode::NoExecution));
        assert_eq!(RunMode::parse("x"), None);
    }
}
