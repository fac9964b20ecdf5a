//! Execution-grounded evaluation of research bundles.
//!
//! A research bundle (plan, report, code, data, recorded results) is judged
//! against a fixed 23-item binary checklist covering coherence,
//! reproducibility and generalizability. Code is executed in tamper-detected
//! workspaces, replicated without access to the report, and verdicts from
//! repeated runs are aggregated and compared with human assessments.

pub mod analytics;
pub mod api;
pub mod bundle;
pub mod checklist;
pub mod config;
pub mod digest;
pub mod evaluators;
pub mod executor;
pub mod judge;
pub mod pipeline;
pub mod sandbox;

pub use bundle::{derive_view, load_bundle, ArtifactKind, BundleView, Category, ResearchBundle, ViewMode};
pub use checklist::{builtin_checklist, ChecklistItem, ItemId, Outcome, Verdict, VerdictDocument};
