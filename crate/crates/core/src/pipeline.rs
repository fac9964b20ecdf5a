//! Whole-task evaluation runs and their on-disk artifacts.
//!
//! Layout under the output directory:
//!
//! ```text
//! <task_id>/run_record.json
//! <task_id>/run_<k>/verdicts.json
//! <task_id>/run_<k>/transcript.jsonl
//! <task_id>/run_<k>/blocks.json
//! <task_id>/run_<k>/gt_trials.json
//! <task_id>/run_<k>/replication/replication_<i>.json, replication_<i>.jsonl
//! <task_id>/run_<k>/run_info.json
//! <task_id>/aggregate_<policy>.json, stability.json, stability.csv
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{
    agent_issues, aggregate, agreement, failure_rates, issue_venn, mean_rated_quality, parse_human_assessment, stability,
    AgreementReport, AnalyticsError, Grouping, Issue, Policy, RateRow, RunSet, StabilityTable, VennCounts,
};
use crate::bundle::{derive_view, safe_join, BundleError, Category, ResearchBundle, ViewMode};
use crate::checklist::{parse_verdicts, serialize_verdicts, DocumentError, ItemId, Verdict, VerdictDocument, CHECKLIST_VERSION};
use crate::config::{BackendKind, ConfigError, RunConfig, RunMode, RunnerKind};
use crate::evaluators::{
    evaluate_consistency, evaluate_execution_quality, evaluate_execution_static, evaluate_generalizability,
    evaluate_generalizability_static, evaluate_instruction_following, evaluate_reproducibility,
    evaluate_reproducibility_static, replicate, verify_replication, BlockVerdicts, ExecEnv, GeneralizationTrial,
    ReplicationRecord,
};
use crate::executor::{run_units, ExecError, ExecutionTranscript, Runner, ShimRunner, SubprocessRunner};
use crate::judge::{Judge, JudgeError, RemoteBackend, RemoteConfig, ScriptedBackend, Templates};
use crate::sandbox::{create_workspace, teardown, verify_integrity, IntegrityReport};

pub const RUN_RECORD_FILE: &str = "run_record.json";
pub const VERDICTS_FILE: &str = "verdicts.json";
pub const STABILITY_FILE: &str = "stability.json";
/// Rationale prefix for items left unevaluated after a fatal error.
pub const ABORTED: &str = "evaluation aborted";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("{path}: {source}")]
    Document { path: String, source: DocumentError },
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("cannot read {path}: {message}")]
    Input { path: String, message: String },
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
}

impl PipelineError {
    /// Errors caused by the caller's inputs rather than by the harness.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, PipelineError::Output { .. })
    }

    fn input(path: &Path, e: impl std::fmt::Display) -> Self {
        PipelineError::Input { path: path.display().to_string(), message: e.to_string() }
    }

    fn output(path: &Path, e: impl std::fmt::Display) -> Self {
        PipelineError::Output { path: path.display().to_string(), message: e.to_string() }
    }
}

/// The item keys a run in `mode` reports. Inapplicable items appear as NA.
pub fn mode_items(mode: RunMode) -> BTreeSet<ItemId> {
    let range = |a, b| ItemId::range(a, b).collect::<Vec<_>>();
    let mut out = BTreeSet::new();
    match mode {
        RunMode::Full => out.extend(ItemId::ALL),
        RunMode::NoExecution => {
            out.extend(range(ItemId::C1, ItemId::C4));
            out.extend(range(ItemId::GT1, ItemId::GT3));
            out.extend(range(ItemId::RP1, ItemId::RP3));
        }
        RunMode::DocOnly => {
            out.extend(range(ItemId::CS1, ItemId::CS5));
            out.extend(range(ItemId::C1, ItemId::C4));
            out.extend(range(ItemId::GT1, ItemId::GT3));
            out.extend(range(ItemId::RP1, ItemId::RP3));
        }
    }
    out
}

pub fn build_judge(config: &RunConfig) -> Result<Judge, PipelineError> {
    let jc = &config.judge;
    let invalid = |m: String| PipelineError::Config(ConfigError::Invalid(m));
    let remote_env = RemoteConfig::from_env();
    let kind = match jc.backend {
        Some(k) => k,
        None if remote_env.is_some() || jc.endpoint.is_some() => BackendKind::Remote,
        None => return Err(invalid("no judge backend: set judge.backend or JUDGE_ENDPOINT".into())),
    };
    let backend: Arc<dyn crate::judge::JudgeBackend> = match kind {
        BackendKind::Scripted => {
            let path = jc.script.as_ref().ok_or_else(|| invalid("judge.script is required for the scripted backend".into()))?;
            Arc::new(ScriptedBackend::from_file(path)?)
        }
        BackendKind::Remote => {
            let mut rc = match (&jc.endpoint, remote_env) {
                (Some(endpoint), env) => {
                    let mut rc = RemoteConfig::new(endpoint.clone());
                    rc.api_key = env.and_then(|e| e.api_key);
                    rc
                }
                (None, Some(env)) => env,
                (None, None) => return Err(invalid("remote judge needs judge.endpoint or JUDGE_ENDPOINT".into())),
            };
            if let Some(m) = &jc.model {
                rc.model = m.clone();
            }
            rc.timeout = Duration::from_secs(jc.timeout_secs);
            Arc::new(RemoteBackend::new(rc)?)
        }
    };
    let templates = match &jc.templates {
        Some(dir) => Templates::with_overrides(dir)?,
        None => Templates::builtin(),
    };
    Ok(Judge::new(backend, templates, jc.settings()))
}

pub fn build_runner(config: &RunConfig) -> Arc<dyn Runner> {
    let ec = &config.executor;
    match ec.runner {
        RunnerKind::Subprocess => Arc::new(SubprocessRunner::new(ec.interpreter.clone())),
        RunnerKind::Shim => Arc::new(ShimRunner::new(ec.shim_command.clone(), ec.session_mode)),
    }
}

/// Everything one evaluation run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub document: VerdictDocument,
    pub transcript: Option<ExecutionTranscript>,
    pub execution_failure: Option<String>,
    pub integrity: Option<IntegrityReport>,
    pub blocks: Vec<BlockVerdicts>,
    pub replications: Vec<ReplicationRecord>,
    pub gt_trials: Vec<GeneralizationTrial>,
    /// Fatal errors; items not reached carry fail-closed verdicts.
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_id: String,
    pub category: Category,
    pub checklist_version: String,
    pub mode: RunMode,
    pub repeats: u32,
    pub run_id: u32,
    pub backend_identity: String,
    pub backend_deterministic: bool,
    pub runner_identity: String,
    pub template_digests: BTreeMap<String, String>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunInfo {
    run: u32,
    run_id: u32,
    mode: RunMode,
    execution_failure: Option<String>,
    integrity: Option<IntegrityReport>,
    errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: String,
    pub dir: PathBuf,
    pub runs: Vec<PathBuf>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub tasks: Vec<TaskSummary>,
}

impl RunSummary {
    pub fn has_errors(&self) -> bool {
        self.tasks.iter().any(|t| !t.errors.is_empty())
    }
}

pub struct Engine {
    config: RunConfig,
    judge: Judge,
    runner: Arc<dyn Runner>,
}

impl Engine {
    pub fn new(config: RunConfig, judge: Judge, runner: Arc<dyn Runner>) -> Engine {
        Engine { config, judge, runner }
    }

    pub fn from_config(config: RunConfig) -> Result<Engine, PipelineError> {
        config.check()?;
        let judge = build_judge(&config)?;
        let runner = build_runner(&config);
        Ok(Engine::new(config, judge, runner))
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    fn env(&self, tag: String) -> ExecEnv<'_> {
        ExecEnv {
            runner: self.runner.as_ref(),
            limits: self.config.executor.limits(),
            workspace_base: self.config.workspace_base(),
            keep_workspaces: self.config.keep_workspaces,
            tag,
        }
    }

    /// One evaluation of `bundle` in the configured mode. Never fails: fatal
    /// errors are recorded and the remaining items fail closed.
    pub fn evaluate(&self, bundle: &Arc<ResearchBundle>, repeat: u32) -> RunArtifacts {
        let run_id = self.config.run_id;
        let mut art = RunArtifacts {
            document: VerdictDocument::new(bundle.task_id.clone(), run_id),
            transcript: None,
            execution_failure: None,
            integrity: None,
            blocks: Vec::new(),
            replications: Vec::new(),
            gt_trials: Vec::new(),
            errors: Vec::new(),
        };
        let tag = format!("{}-run{repeat}", bundle.task_id);
        let result = match self.config.mode {
            RunMode::Full => self.evaluate_full(bundle, &self.env(tag), &mut art),
            mode => self.evaluate_static(bundle, mode, &mut art),
        };
        if let Err(e) = result {
            tracing::error!(task = %bundle.task_id, "evaluation aborted: {e}");
            art.errors.push(e.to_string());
        }
        // Anything not reached fails closed.
        for id in mode_items(self.config.mode) {
            if !art.document.entries.contains_key(&id) {
                let rule = id.item().applicability;
                let v = if rule.applies(bundle.category, bundle.has_demo, bundle.proposes_new_method) {
                    let why = art.errors.first().map(String::as_str).unwrap_or("not evaluated");
                    Verdict::fail(id, format!("{ABORTED}: {why}"), run_id)
                } else {
                    Verdict::not_applicable(id, run_id)
                };
                art.document.insert(v);
            }
        }
        art
    }

    fn evaluate_static(&self, bundle: &Arc<ResearchBundle>, mode: RunMode, art: &mut RunArtifacts) -> Result<(), JudgeError> {
        let run_id = self.config.run_id;
        let view = derive_view(bundle.clone(), mode.view_mode());
        let doc = &mut art.document;
        if mode == RunMode::DocOnly {
            extend(doc, evaluate_consistency(&view, &self.judge, run_id)?);
        }
        extend(doc, evaluate_execution_static(&view, &self.judge, run_id)?);
        extend(doc, evaluate_reproducibility_static(&view, &self.judge, run_id)?);
        extend(doc, evaluate_generalizability_static(&view, &self.judge, run_id)?);
        Ok(())
    }

    fn evaluate_full(&self, bundle: &Arc<ResearchBundle>, env: &ExecEnv<'_>, art: &mut RunArtifacts) -> Result<(), JudgeError> {
        let run_id = self.config.run_id;
        let judge = &self.judge;
        let view = derive_view(bundle.clone(), ViewMode::Full);
        extend(&mut art.document, evaluate_consistency(&view, judge, run_id)?);
        extend(&mut art.document, evaluate_instruction_following(&view, judge, run_id)?);

        self.execute(bundle, env, art);
        let quality = evaluate_execution_quality(
            art.transcript.as_ref(),
            art.execution_failure.as_deref(),
            &view,
            judge,
            run_id,
        )?;
        extend(&mut art.document, quality.task);
        art.blocks = quality.blocks;

        for ordinal in 1..=self.config.replication.replications {
            art.replications.push(replicate(bundle, env, judge, ordinal)?);
        }
        let first = &art.replications[0];
        extend(&mut art.document, verify_replication(&bundle.recorded_results, first, &view, judge, run_id)?);
        extend(&mut art.document, evaluate_reproducibility(&view, &art.replications, judge, run_id)?);

        let (gt, trials) = evaluate_generalizability(
            bundle,
            env,
            judge,
            self.config.judge.strict,
            self.config.replication.max_trials,
            run_id,
        )?;
        extend(&mut art.document, gt);
        art.gt_trials = trials;
        Ok(())
    }

    /// Runs the bundle's code once in a full workspace.
    fn execute(&self, bundle: &ResearchBundle, env: &ExecEnv<'_>, art: &mut RunArtifacts) {
        let ws = match create_workspace(bundle, &format!("{}-exec", env.tag), &env.workspace_base) {
            Ok(ws) => ws,
            Err(e) => {
                art.execution_failure = Some(format!("workspace: {e}"));
                return;
            }
        };
        match run_units(&ws, &bundle.code_units, &env.limits, env.runner) {
            Ok(t) => art.transcript = Some(t),
            Err(ExecError::RunnerCrashed { message, transcript }) => {
                art.execution_failure = Some(format!("runner crashed: {message}"));
                art.transcript = Some(*transcript);
            }
            Err(e) => art.execution_failure = Some(e.to_string()),
        }
        match verify_integrity(&ws) {
            Ok(report) => art.integrity = Some(report),
            Err(e) => tracing::warn!("integrity check failed: {e}"),
        }
        let td = teardown(&ws, env.keep_workspaces);
        tracing::debug!(root = %td.root.display(), "{}", td.note);
    }

    pub fn run_record(&self, bundle: &ResearchBundle) -> RunRecord {
        RunRecord {
            task_id: bundle.task_id.clone(),
            category: bundle.category,
            checklist_version: CHECKLIST_VERSION.to_string(),
            mode: self.config.mode,
            repeats: self.config.repeats,
            run_id: self.config.run_id,
            backend_identity: self.judge.backend_identity(),
            backend_deterministic: self.judge.is_deterministic(),
            runner_identity: self.runner.identity(),
            template_digests: self.judge.templates().digests(),
            config: self.config.clone(),
        }
    }

    /// Evaluates every bundle `repeats` times, up to `jobs` evaluations at
    /// once, and writes all artifacts under the output directory.
    pub fn run(&self, bundles: &[Arc<ResearchBundle>]) -> Result<RunSummary, PipelineError> {
        let out = &self.config.out;
        let mut seen = BTreeSet::new();
        for b in bundles {
            if !seen.insert(b.task_id.as_str()) {
                return Err(PipelineError::Config(ConfigError::Invalid(format!("duplicate task_id `{}`", b.task_id))));
            }
        }
        let mut summaries = Vec::new();
        for b in bundles {
            let dir = safe_join(out, &b.task_id).map_err(|_| PipelineError::output(out, "task_id is not a safe path"))?;
            fs::create_dir_all(&dir).map_err(|e| PipelineError::output(&dir, e))?;
            write_json(&dir.join(RUN_RECORD_FILE), &self.run_record(b))?;
            summaries.push(TaskSummary { task_id: b.task_id.clone(), dir, runs: Vec::new(), errors: Vec::new() });
        }

        let jobs: Vec<(usize, u32)> =
            (0..bundles.len()).flat_map(|t| (1..=self.config.repeats).map(move |k| (t, k))).collect();
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<(usize, u32, Result<PathBuf, PipelineError>, Vec<String>)>> = Mutex::new(Vec::new());
        let workers = self.config.jobs.min(jobs.len()).max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&(t, k)) = jobs.get(i) else { break };
                    let art = self.evaluate(&bundles[t], k);
                    let errors = art.errors.clone();
                    let written = write_run(&summaries[t].dir, k, self.config.mode, &art);
                    results.lock().expect("results lock").push((t, k, written, errors));
                });
            }
        });
        let mut results = results.into_inner().expect("results lock");
        results.sort_by_key(|(t, k, _, _)| (*t, *k));
        for (t, k, written, errors) in results {
            let s = &mut summaries[t];
            s.runs.push(written?);
            s.errors.extend(errors.into_iter().map(|e| format!("run {k}: {e}")));
        }
        Ok(RunSummary { tasks: summaries })
    }
}

fn extend(doc: &mut VerdictDocument, verdicts: Vec<Verdict>) {
    for v in verdicts {
        doc.insert(v);
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|e| PipelineError::output(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::output(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn run_dir(task_dir: &Path, k: u32) -> PathBuf {
    task_dir.join(format!("run_{k}"))
}

/// Writes one run's artifacts and returns the path of its verdict file.
pub fn write_run(task_dir: &Path, k: u32, mode: RunMode, art: &RunArtifacts) -> Result<PathBuf, PipelineError> {
    let dir = run_dir(task_dir, k);
    let rep_dir = dir.join("replication");
    fs::create_dir_all(&rep_dir).map_err(|e| PipelineError::output(&rep_dir, e))?;
    let verdicts = dir.join(VERDICTS_FILE);
    write_text(&verdicts, &serialize_verdicts(&art.document))?;
    let jsonl = art.transcript.as_ref().map(ExecutionTranscript::transcript_jsonl).unwrap_or_default();
    write_text(&dir.join("transcript.jsonl"), &jsonl)?;
    write_json(&dir.join("blocks.json"), &art.blocks)?;
    write_json(&dir.join("gt_trials.json"), &art.gt_trials)?;
    for (i, r) in art.replications.iter().enumerate() {
        let n = i + 1;
        write_json(&rep_dir.join(format!("replication_{n}.json")), r)?;
        if let Some(t) = &r.replication_transcript {
            write_text(&rep_dir.join(format!("replication_{n}.jsonl")), &t.transcript_jsonl())?;
        }
    }
    let info = RunInfo {
        run: k,
        run_id: art.document.run_id,
        mode,
        execution_failure: art.execution_failure.clone(),
        integrity: art.integrity.clone(),
        errors: art.errors.clone(),
    };
    write_json(&dir.join("run_info.json"), &info)?;
    Ok(verdicts)
}

pub fn read_verdicts(path: &Path) -> Result<VerdictDocument, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::input(path, e))?;
    parse_verdicts(&text).map_err(|source| PipelineError::Document { path: path.display().to_string(), source })
}

pub fn read_run_record(task_dir: &Path) -> Result<RunRecord, PipelineError> {
    let path = task_dir.join(RUN_RECORD_FILE);
    let text = fs::read_to_string(&path).map_err(|e| PipelineError::input(&path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::input(&path, e))
}

/// Loads the run set of a task directory. The run record says how many runs
/// to expect; a missing run file is a key mismatch.
pub fn load_run_set(task_dir: &Path) -> Result<RunSet, PipelineError> {
    let record = read_run_record(task_dir)?;
    let mut runs = Vec::new();
    for k in 1..=record.repeats {
        let path = run_dir(task_dir, k).join(VERDICTS_FILE);
        if !path.is_file() {
            return Err(AnalyticsError::KeyMismatch(format!("missing run file {}", path.display())).into());
        }
        runs.push(read_verdicts(&path)?);
    }
    Ok(RunSet::new(runs)?.with_category(record.category))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateOutput {
    pub policy: Policy,
    pub path: PathBuf,
    /// Canonical verdict JSON of the aggregate.
    pub document: String,
    pub stability: StabilityTable,
}

pub fn aggregate_path(task_dir: &Path, policy: Policy) -> PathBuf {
    task_dir.join(format!("aggregate_{}.json", policy.as_str()))
}

/// Aggregates the runs of a task directory and writes the aggregate and
/// stability tables next to them.
pub fn aggregate_task(task_dir: &Path, policy: Policy) -> Result<AggregateOutput, PipelineError> {
    let rs = load_run_set(task_dir)?;
    let doc = serialize_verdicts(&aggregate(&rs, policy));
    let table = stability(&rs);
    let path = aggregate_path(task_dir, policy);
    write_text(&path, &doc)?;
    write_json(&task_dir.join(STABILITY_FILE), &table)?;
    write_text(&task_dir.join("stability.csv"), &crate::analytics::stability_csv(&table))?;
    Ok(AggregateOutput { policy, path, document: doc, stability: table })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreeOutput {
    pub agreement: AgreementReport,
    pub venn: VennCounts,
    pub rated_quality: BTreeMap<String, f64>,
}

/// Compares an (aggregate) verdict document with a human assessment. Agent
/// issues come from FAIL verdicts unless an explicit issue list is given.
pub fn agree(
    agent_text: &str,
    human_text: &str,
    agent_issue_list: Option<Vec<Issue>>,
) -> Result<AgreeOutput, PipelineError> {
    let agent = parse_verdicts(agent_text)
        .map_err(|source| PipelineError::Document { path: "agent verdicts".into(), source })?;
    let human = parse_human_assessment(human_text)?;
    let report = agreement(&agent, &human)?;
    let issues = agent_issue_list.unwrap_or_else(|| agent_issues(&agent));
    let venn = issue_venn(&issues, &human.issues)?;
    let rated_quality = mean_rated_quality(std::slice::from_ref(&human))?;
    Ok(AgreeOutput { agreement: report, venn, rated_quality })
}

pub fn read_input(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| PipelineError::input(path, e))
}

pub fn parse_issue_list(text: &str) -> Result<Vec<Issue>, PipelineError> {
    serde_json::from_str(text).map_err(|e| AnalyticsError::Malformed(format!("issue list: {e}")).into())
}

/// Failure rates over the aggregated runs of several task directories.
pub fn rates(task_dirs: &[PathBuf], grouping: Grouping, policy: Policy) -> Result<Vec<RateRow>, PipelineError> {
    let sets = task_dirs.iter().map(|d| load_run_set(d)).collect::<Result<Vec<_>, _>>()?;
    Ok(failure_rates(&sets, grouping, policy)?)
}
