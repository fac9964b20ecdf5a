#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use execeval_core::bundle::{
    write_bundle, Category, CodeUnit, Document, Metric, ResultsManifest, UnitKind,
};
use execeval_core::executor::{ExecError, ExecLimits, Runner, RunnerSession, SubprocessRunner};
use execeval_core::sandbox::Workspace;
use execeval_core::config::{RunConfig, RunMode};
use execeval_core::judge::{Judge, JudgeSettings, ScriptedBackend, Templates};
use execeval_core::pipeline::Engine;
use execeval_core::ResearchBundle;

pub fn script_unit(index: usize, source: &str) -> CodeUnit {
    CodeUnit {
        index,
        kind: UnitKind::Script,
        source: source.to_string(),
        recorded_output: None,
        declared_inputs: vec![],
    }
}

/// An in-memory bundle whose units are `sh` scripts.
pub fn sh_bundle(task_id: &str, sources: &[&str]) -> ResearchBundle {
    ResearchBundle {
        root: PathBuf::new(),
        task_id: task_id.to_string(),
        category: Category::OpenEnded,
        has_demo: false,
        proposes_new_method: false,
        prompt: Some(Document::from("Measure how often the toy model answers correctly.")),
        plan: Document::from("Goal: measure accuracy. Steps: compute accuracy and write it out."),
        walkthrough: Some(Document::from("Unit 0 computes accuracy; unit 1 prints it.")),
        report: Document::from("Accuracy is 0.9, which supports the hypothesis."),
        code_units: sources.iter().enumerate().map(|(i, s)| script_unit(i, s)).collect(),
        data_manifest: vec![],
        recorded_results: ResultsManifest {
            metrics: vec![Metric { name: "accuracy".into(), value: 0.9 }],
            conclusions: vec!["accuracy is high".into()],
        },
    }
}

/// Writes `bundle` under `dir/<task_id>` and loads it back.
pub fn materialize(bundle: &ResearchBundle, dir: &Path) -> ResearchBundle {
    let root = dir.join(&bundle.task_id);
    write_bundle(bundle, &root).expect("write bundle");
    execeval_core::load_bundle(&root).expect("load bundle")
}

pub fn sh_runner() -> SubprocessRunner {
    SubprocessRunner::new(vec!["sh".into()])
}

/// Wraps a runner and counts launches.
pub struct CountingRunner<R> {
    pub inner: R,
    pub launches: Arc<AtomicUsize>,
}

impl<R> CountingRunner<R> {
    pub fn new(inner: R) -> Self {
        CountingRunner { inner, launches: Arc::new(AtomicUsize::new(0)) }
    }

    pub fn count(&self) -> usize {
        self.launches.load(Ordering::SeqCst)
    }
}

impl<R: Runner> Runner for CountingRunner<R> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn launch(
        &self,
        ws: &Workspace,
        units: &[CodeUnit],
        limits: &ExecLimits,
    ) -> Result<Box<dyn RunnerSession>, ExecError> {
        self.launches.fetch_add(1, Ordering::SeqCst);
        self.inner.launch(ws, units, limits)
    }
}

pub const PASS: &str = r#"{"verdict":"PASS","rationale":"consistent with the evidence"}"#;

/// A judge table that passes everything and proposes runnable probes.
pub fn pass_table() -> serde_json::Value {
    let probe = |kind: &str| {
        serde_json::json!({"kind": kind, "description": format!("{kind} probe"), "code": "echo METRIC probe=1"})
    };
    serde_json::json!({
        "*/verdict": PASS,
        "*/block": PASS,
        "*/assess": r#"{"verdict":"PASS","rationale":"probe output supports the claim"}"#,
        "*/summarize": "All units ran; accuracy was written out.",
        "GT1/propose": probe("new_model").to_string(),
        "GT2/propose": probe("new_data").to_string(),
        "GT3/propose": probe("new_task").to_string(),
    })
}

pub fn judge_from(table: &serde_json::Value) -> Judge {
    let backend = ScriptedBackend::from_json(&table.to_string()).expect("table");
    Judge::new(Arc::new(backend), Templates::builtin(), JudgeSettings::default())
}

/// Two deterministic units; the second reports the metric.
pub fn fixture_bundle(task_id: &str) -> ResearchBundle {
    sh_bundle(task_id, &["echo computing", "echo METRIC accuracy=0.9"])
}

pub fn test_config(root: &Path, mode: RunMode) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.mode = mode;
    cfg.out = root.join("runs");
    cfg.workspace_dir = Some(root.join("ws"));
    cfg.executor.interpreter = vec!["sh".into()];
    cfg.executor.per_unit_timeout_secs = 20;
    cfg
}

pub fn engine(cfg: RunConfig, judge: Judge, runner: Arc<dyn Runner>) -> Engine {
    Engine::new(cfg, judge, runner)
}
