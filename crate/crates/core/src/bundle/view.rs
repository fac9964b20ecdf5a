use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::*;

/// Kinds of evidence a judge may see. The first seven come from the bundle;
/// the last three are produced by running code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Prompt,
    Plan,
    Walkthrough,
    Report,
    Code,
    Data,
    Results,
    Transcript,
    Replication,
    Probe,
}

impl ArtifactKind {
    pub const BUNDLE: [ArtifactKind; 7] = [
        ArtifactKind::Prompt,
        ArtifactKind::Plan,
        ArtifactKind::Walkthrough,
        ArtifactKind::Report,
        ArtifactKind::Code,
        ArtifactKind::Data,
        ArtifactKind::Results,
    ];
    pub const EXECUTION: [ArtifactKind; 3] =
        [ArtifactKind::Transcript, ArtifactKind::Replication, ArtifactKind::Probe];

    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Prompt => "prompt",
            ArtifactKind::Plan => "plan",
            ArtifactKind::Walkthrough => "walkthrough",
            ArtifactKind::Report => "report",
            ArtifactKind::Code => "code",
            ArtifactKind::Data => "data",
            ArtifactKind::Results => "results",
            ArtifactKind::Transcript => "transcript",
            ArtifactKind::Replication => "replication",
            ArtifactKind::Probe => "probe",
        }
    }

    pub fn parse(s: &str) -> Option<ArtifactKind> {
        ArtifactKind::BUNDLE
            .into_iter()
            .chain(ArtifactKind::EXECUTION)
            .find(|k| k.as_str() == s)
    }

    /// Files in the bundle directory that hold this artifact.
    pub fn files(self) -> &'static [&'static str] {
        match self {
            ArtifactKind::Prompt => &[PROMPT_FILE],
            ArtifactKind::Plan => &[PLAN_FILE],
            ArtifactKind::Walkthrough => &[WALKTHROUGH_FILE],
            ArtifactKind::Report => &[REPORT_FILE],
            ArtifactKind::Code => &[CODE_DIR],
            ArtifactKind::Data => &[DATA_DIR],
            ArtifactKind::Results => &[RESULTS_FILE],
            _ => &[],
        }
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewMode {
    Full,
    ReplicationView,
    DocOnly,
    NoExecution,
}

impl ViewMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViewMode::Full => "full",
            ViewMode::ReplicationView => "replication_view",
            ViewMode::DocOnly => "doc_only",
            ViewMode::NoExecution => "no_execution",
        }
    }
}

/// A redacted window onto a bundle. Accessors for artifacts outside
/// `visible_artifacts` return `None`.
#[derive(Debug, Clone)]
pub struct BundleView {
    mode: ViewMode,
    visible: BTreeSet<ArtifactKind>,
    execution_allowed: bool,
    bundle: Arc<ResearchBundle>,
}

pub fn derive_view(bundle: Arc<ResearchBundle>, mode: ViewMode) -> BundleView {
    let all_bundle = ArtifactKind::BUNDLE.into_iter();
    let (visible, execution_allowed): (BTreeSet<_>, bool) = match mode {
        ViewMode::Full => (all_bundle.chain(ArtifactKind::EXECUTION).collect(), true),
        // The recorded results manifest is extracted from the report, so it
        // goes with it.
        ViewMode::ReplicationView => (
            all_bundle
                .filter(|k| !matches!(k, ArtifactKind::Report | ArtifactKind::Results))
                .chain(ArtifactKind::EXECUTION)
                .collect(),
            true,
        ),
        ViewMode::DocOnly => ([ArtifactKind::Report].into_iter().collect(), false),
        ViewMode::NoExecution => (all_bundle.collect(), false),
    };
    BundleView { mode, visible, execution_allowed, bundle }
}

impl BundleView {
    pub fn mode(&self) -> ViewMode {
        self.mode
    }

    pub fn execution_allowed(&self) -> bool {
        self.execution_allowed
    }

    pub fn visible_artifacts(&self) -> &BTreeSet<ArtifactKind> {
        &self.visible
    }

    pub fn is_visible(&self, kind: ArtifactKind) -> bool {
        self.visible.contains(&kind)
    }

    pub fn task_id(&self) -> &str {
        &self.bundle.task_id
    }

    pub fn category(&self) -> Category {
        self.bundle.category
    }

    pub fn has_demo(&self) -> bool {
        self.bundle.has_demo
    }

    pub fn proposes_new_method(&self) -> bool {
        self.bundle.proposes_new_method
    }

    pub fn document(&self, kind: ArtifactKind) -> Option<&Document> {
        if !self.is_visible(kind) {
            return None;
        }
        match kind {
            ArtifactKind::Prompt => self.bundle.prompt.as_ref(),
            ArtifactKind::Plan => Some(&self.bundle.plan),
            ArtifactKind::Walkthrough => self.bundle.walkthrough.as_ref(),
            ArtifactKind::Report => Some(&self.bundle.report),
            _ => None,
        }
    }

    pub fn code_units(&self) -> Option<&[CodeUnit]> {
        self.is_visible(ArtifactKind::Code).then_some(self.bundle.code_units.as_slice())
    }

    pub fn data_manifest(&self) -> Option<&[DataEntry]> {
        self.is_visible(ArtifactKind::Data).then_some(self.bundle.data_manifest.as_slice())
    }

    pub fn recorded_results(&self) -> Option<&ResultsManifest> {
        self.is_visible(ArtifactKind::Results).then_some(&self.bundle.recorded_results)
    }

    /// Bundle-relative files a workspace built from this view must omit.
    pub fn excluded_files(&self) -> Vec<&'static str> {
        ArtifactKind::BUNDLE
            .into_iter()
            .filter(|k| !self.is_visible(*k))
            .flat_map(|k| k.files().iter().copied())
            .collect()
    }

    /// The unredacted bundle, for code that builds workspaces or applies
    /// applicability rules. Never use it to build judge evidence.
    pub(crate) fn source(&self) -> &Arc<ResearchBundle> {
        &self.bundle
    }
}
