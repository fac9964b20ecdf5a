//! Evidence excerpts built from a view. Everything here goes through the
//! view's accessors, so hidden artifacts cannot leak into an excerpt.

use std::fmt::Write as _;

use super::Excerpt;
use crate::bundle::{ArtifactKind, BundleView, ResultsManifest, CODE_DIR, DATA_DIR};
use crate::executor::ExecutionTranscript;

pub(crate) fn render_results(results: &ResultsManifest) -> String {
    let mut out = String::new();
    for m in &results.metrics {
        let _ = writeln!(out, "metric {} = {}", m.name, m.value);
    }
    for c in &results.conclusions {
        let _ = writeln!(out, "conclusion: {c}");
    }
    out
}

/// Excerpts for the requested bundle artifacts that the view exposes, in the
/// order given. Execution artifacts are ignored here.
pub fn view_excerpts(view: &BundleView, kinds: &[ArtifactKind]) -> Vec<Excerpt> {
    let mut out = Vec::new();
    for &kind in kinds {
        if !view.is_visible(kind) {
            continue;
        }
        match kind {
            ArtifactKind::Prompt | ArtifactKind::Plan | ArtifactKind::Walkthrough | ArtifactKind::Report => {
                if let Some(doc) = view.document(kind) {
                    out.push(Excerpt::new(kind, kind.files()[0], doc.as_str()));
                }
            }
            ArtifactKind::Code => {
                for u in view.code_units().unwrap_or_default() {
                    let mut text = u.source.clone();
                    if let Some(rec) = &u.recorded_output {
                        let _ = write!(text, "\n--- recorded output ---\n{rec}");
                    }
                    out.push(Excerpt::new(kind, format!("{CODE_DIR}/{:03}_{}", u.index, u.kind.as_str()), text));
                }
            }
            ArtifactKind::Data => {
                let entries = view.data_manifest().unwrap_or_default();
                if !entries.is_empty() {
                    let text = entries
                        .iter()
                        .map(|d| format!("{} (role: {}, sha256: {})", d.path, d.role, d.checksum))
                        .collect::<Vec<_>>()
                        .join("\n");
                    out.push(Excerpt::new(kind, DATA_DIR, text));
                }
            }
            ArtifactKind::Results => {
                if let Some(r) = view.recorded_results() {
                    out.push(Excerpt::new(kind, "results.json", render_results(r)));
                }
            }
            ArtifactKind::Transcript | ArtifactKind::Replication | ArtifactKind::Probe => {}
        }
    }
    out
}

/// One excerpt per executed unit of a transcript.
pub fn transcript_excerpts(kind: ArtifactKind, transcript: &ExecutionTranscript) -> Vec<Excerpt> {
    transcript
        .units
        .iter()
        .map(|u| {
            let mut text = format!("outcome: {}\n", u.outcome.label());
            if let crate::executor::UnitOutcome::Failed { error_class, traceback } = &u.outcome {
                let _ = writeln!(text, "error class: {}\n{}", error_class.as_str(), traceback.trim_end());
            }
            if !u.stdout.is_empty() {
                let _ = writeln!(text, "stdout:\n{}", u.stdout.trim_end());
            }
            if !u.stderr.is_empty() {
                let _ = writeln!(text, "stderr:\n{}", u.stderr.trim_end());
            }
            Excerpt::new(kind, format!("unit {}", u.index), text)
        })
        .collect()
}
