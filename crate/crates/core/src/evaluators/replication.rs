use std::fmt::Write as _;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{evidence_for, ExecEnv};
use crate::bundle::{derive_view, parse_results_manifest, ArtifactKind, BundleView, ResearchBundle, ResultsManifest, ViewMode, RESULTS_FILE};
use crate::checklist::{ItemId, Verdict};
use crate::executor::{run_units, ExecError, ExecutionTranscript, UnitOutcome};
use crate::judge::{parse_summary, templates, transcript_excerpts, Excerpt, Judge, JudgeError, Purpose};
use crate::sandbox::{create_workspace_for_view, teardown, verify_integrity, IntegrityReport};

pub const RELATIVE_TOLERANCE: f64 = 0.05;
/// Bound on |replicated| when the original value is exactly zero.
pub const ZERO_EPSILON: f64 = 1e-9;
// Absorbs binary rounding at exactly 5% (1.05 - 1.0 is 0.05000000000000004).
const ROUNDING_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricsSource {
    /// `output/results.json` written by the code.
    ResultsFile,
    /// `METRIC name=value` lines on stdout.
    StdoutLines,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replicated_results: ResultsManifest,
    pub metrics_source: MetricsSource,
    pub replication_transcript: Option<ExecutionTranscript>,
    /// Produced from plan, code and transcript only.
    pub replication_summary: String,
    pub integrity: Option<IntegrityReport>,
    /// Problems met while replicating, in the order found.
    pub obstacles: Vec<String>,
}

impl ReplicationRecord {
    /// Evidence text describing this replication.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "replicated documentation:\n{}\n", self.replication_summary.trim());
        let _ = writeln!(out, "replicated metrics (source: {:?}):", self.metrics_source);
        for m in &self.replicated_results.metrics {
            let _ = writeln!(out, "  {} = {}", m.name, m.value);
        }
        if !self.obstacles.is_empty() {
            let _ = writeln!(out, "obstacles:");
            for o in &self.obstacles {
                let _ = writeln!(out, "  - {o}");
            }
        }
        out
    }

    pub fn excerpts(&self, label: &str) -> Vec<Excerpt> {
        let mut ev = vec![Excerpt::new(ArtifactKind::Replication, label, self.render())];
        if let Some(t) = &self.replication_transcript {
            for mut e in transcript_excerpts(ArtifactKind::Replication, t) {
                e.locator = format!("{label} {}", e.locator);
                ev.push(e);
            }
        }
        ev
    }
}

fn metric_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*METRIC\s+([^\s=]+)\s*=\s*(\S+)\s*$").expect("static regex"))
}

/// Replicated metrics: `results.json` in `output_dir` if present and valid,
/// else `METRIC name=value` lines from stdout (the last value of a name
/// wins). Problems are appended to `obstacles`.
pub fn extract_metrics(
    output_dir: &Path,
    transcript: Option<&ExecutionTranscript>,
    obstacles: &mut Vec<String>,
) -> (ResultsManifest, MetricsSource) {
    let file = output_dir.join(RESULTS_FILE);
    if let Ok(text) = std::fs::read_to_string(&file) {
        match parse_results_manifest(&text, "output/results.json") {
            Ok(m) => return (m, MetricsSource::ResultsFile),
            Err(e) => obstacles.push(e.to_string()),
        }
    }
    let mut manifest = ResultsManifest::default();
    if let Some(t) = transcript {
        for line in t.stdout().lines() {
            if let Some(c) = metric_line_re().captures(line) {
                match c[2].parse::<f64>() {
                    Ok(v) => manifest.set(&c[1], v),
                    Err(_) => obstacles.push(format!("unparseable metric line: {line}")),
                }
            }
        }
    }
    if manifest.metrics.is_empty() {
        obstacles.push("no replicated metrics: neither output/results.json nor METRIC lines".into());
        return (manifest, MetricsSource::None);
    }
    (manifest, MetricsSource::StdoutLines)
}

/// Re-executes the code in a fresh workspace built from the replication
/// view, so neither the report nor the recorded results are present.
pub fn replicate(
    bundle: &Arc<ResearchBundle>,
    env: &ExecEnv<'_>,
    judge: &Judge,
    ordinal: u32,
) -> Result<ReplicationRecord, JudgeError> {
    let view = derive_view(bundle.clone(), ViewMode::ReplicationView);
    let mut obstacles = Vec::new();
    let mut transcript = None;
    let mut integrity = None;
    let mut results = (ResultsManifest::default(), MetricsSource::None);
    match create_workspace_for_view(&view, &format!("{}-rep{ordinal}", env.tag), &env.workspace_base) {
        Err(e) => obstacles.push(format!("workspace: {e}")),
        Ok(ws) => {
            let units = view.code_units().unwrap_or_default();
            match run_units(&ws, units, &env.limits, env.runner) {
                Ok(t) => transcript = Some(t),
                Err(ExecError::RunnerCrashed { message, transcript: t }) => {
                    obstacles.push(format!("runner crashed: {message}"));
                    transcript = Some(*t);
                }
                Err(e) => obstacles.push(e.to_string()),
            }
            if let Some(t) = &transcript {
                for u in &t.units {
                    match &u.outcome {
                        UnitOutcome::Succeeded => {}
                        UnitOutcome::Failed { error_class, traceback } => {
                            let last = traceback.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("");
                            obstacles.push(format!("unit {} failed ({}): {}", u.index, error_class.as_str(), last.trim()));
                        }
                        other => obstacles.push(format!("unit {} {}", u.index, other.label())),
                    }
                }
            }
            results = extract_metrics(&ws.output_dir, transcript.as_ref(), &mut obstacles);
            match verify_integrity(&ws) {
                Ok(report) => {
                    if !report.is_clean() {
                        obstacles.push(format!("workspace modified outside output/: {}", report.summary()));
                    }
                    integrity = Some(report);
                }
                Err(e) => obstacles.push(format!("integrity check: {e}")),
            }
            let td = teardown(&ws, env.keep_workspaces);
            tracing::debug!(root = %td.root.display(), "{}", td.note);
        }
    }

    let mut partial = ReplicationRecord {
        replicated_results: results.0,
        metrics_source: results.1,
        replication_transcript: transcript,
        replication_summary: String::new(),
        integrity,
        obstacles,
    };
    let extra = partial.excerpts("replication");
    let evidence = evidence_for(judge, &view, templates::REPLICATION_SUMMARY, extra);
    let request = judge.request(&view, None, Purpose::Summarize, templates::REPLICATION_SUMMARY, evidence)?;
    match judge.ask(&request, parse_summary) {
        Ok(summary) => partial.replication_summary = summary,
        Err(why) => partial.obstacles.push(format!("summary unavailable: {why}")),
    }
    Ok(partial)
}

/// `|rep - orig| <= 5% of |orig|`, with an absolute bound at zero.
/// Non-finite values never match.
pub fn within_tolerance(orig: f64, rep: f64) -> bool {
    if !orig.is_finite() || !rep.is_finite() {
        return false;
    }
    if orig == 0.0 {
        return rep.abs() <= ZERO_EPSILON;
    }
    (rep - orig).abs() <= RELATIVE_TOLERANCE * orig.abs() + ROUNDING_SLACK * orig.abs()
}

fn deviation(orig: f64, rep: f64) -> String {
    if orig == 0.0 {
        format!("absolute {:.3e}", (rep - orig).abs())
    } else {
        format!("{:.2}%", 100.0 * (rep - orig).abs() / orig.abs())
    }
}

/// Compares every shared metric; `Err` carries the FAIL rationale.
fn compare(a: &ResultsManifest, b: &ResultsManifest, a_label: &str, b_label: &str) -> Result<String, String> {
    let shared: Vec<_> = a.metrics.iter().filter_map(|m| b.get(&m.name).map(|v| (&m.name, m.value, v))).collect();
    if shared.is_empty() {
        return Err("no comparable metrics".into());
    }
    let mut bad = Vec::new();
    let mut good = Vec::new();
    for (name, x, y) in &shared {
        let line = format!("{name}: {a_label} {x}, {b_label} {y} ({})", deviation(*x, *y));
        if within_tolerance(*x, *y) {
            good.push(line);
        } else {
            bad.push(line);
        }
    }
    if bad.is_empty() {
        Ok(format!("all {} shared metrics within 5%: {}", shared.len(), good.join("; ")))
    } else {
        Err(format!("exceeds 5% tolerance: {}", bad.join("; ")))
    }
}

/// DE1: deterministic fidelity check of replicated against original metrics.
pub fn de1_verdict(original: &ResultsManifest, replicated: &ResultsManifest, run_id: u32) -> Verdict {
    match compare(original, replicated, "original", "replicated") {
        Ok(why) => Verdict::pass(ItemId::DE1, why, run_id),
        Err(why) => Verdict::fail(ItemId::DE1, why, run_id),
    }
}

/// DE1 from the manifests; DE2 and DE3 judged against the original
/// documentation.
pub fn verify_replication(
    original: &ResultsManifest,
    record: &ReplicationRecord,
    view: &BundleView,
    judge: &Judge,
    run_id: u32,
) -> Result<Vec<Verdict>, JudgeError> {
    let mut out = vec![de1_verdict(original, &record.replicated_results, run_id)];
    for item in [ItemId::DE2, ItemId::DE3] {
        let evidence = evidence_for(judge, view, templates::REPLICATION_VERIFY, record.excerpts("replication"));
        out.push(judge.verdict(view, item, Purpose::Verdict, templates::REPLICATION_VERIFY, evidence, run_id)?);
    }
    Ok(out)
}

/// RP3 from two or more replications: every pair must agree within the DE1
/// tolerance, checked in both directions.
pub fn rp3_verdict(records: &[ReplicationRecord], run_id: u32) -> Verdict {
    assert!(records.len() >= 2, "RP3 needs at least two replications");
    let mut notes = Vec::new();
    for i in 0..records.len() {
        for j in i + 1..records.len() {
            let (a, b) = (&records[i].replicated_results, &records[j].replicated_results);
            let (la, lb) = (format!("replication {}", i + 1), format!("replication {}", j + 1));
            let forward = compare(a, b, &la, &lb);
            let backward = compare(b, a, &lb, &la);
            match (forward, backward) {
                (Ok(why), Ok(_)) => notes.push(why),
                (Err(why), _) | (_, Err(why)) => {
                    return Verdict::fail(ItemId::RP3, format!("{la} vs {lb}: {why}"), run_id);
                }
            }
        }
    }
    Verdict::pass(ItemId::RP3, format!("{} replications agree; {}", records.len(), notes.join(" | ")), run_id)
}

/// RP1-RP4 with replication evidence. RP3 is deterministic when at least
/// two replications exist.
pub fn evaluate_reproducibility(
    view: &BundleView,
    records: &[ReplicationRecord],
    judge: &Judge,
    run_id: u32,
) -> Result<Vec<Verdict>, JudgeError> {
    let extra: Vec<Excerpt> = records
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.excerpts(&format!("replication {}", i + 1)))
        .collect();
    let mut out = Vec::new();
    for item in ItemId::range(ItemId::RP1, ItemId::RP4) {
        let rule = item.item().applicability;
        if !rule.applies(view.category(), view.has_demo(), view.proposes_new_method()) {
            out.push(Verdict::not_applicable(item, run_id));
            continue;
        }
        if item == ItemId::RP3 && records.len() >= 2 {
            out.push(rp3_verdict(records, run_id));
            continue;
        }
        let evidence = evidence_for(judge, view, templates::REPRODUCIBILITY, extra.clone());
        out.push(judge.verdict(view, item, Purpose::Verdict, templates::REPRODUCIBILITY, evidence, run_id)?);
    }
    Ok(out)
}

/// RP1-RP3 judged without any replication, for views that cannot execute.
pub fn evaluate_reproducibility_static(view: &BundleView, judge: &Judge, run_id: u32) -> Result<Vec<Verdict>, JudgeError> {
    ItemId::range(ItemId::RP1, ItemId::RP3)
        .map(|item| {
            let evidence = evidence_for(judge, view, templates::REPRODUCIBILITY, vec![]);
            judge.verdict(view, item, Purpose::Verdict, templates::REPRODUCIBILITY, evidence, run_id)
        })
        .collect()
}
