//! Per-dimension evaluation pipelines.
//!
//! Deterministic verdicts (C1, DE1, RP3 with two or more replications) are
//! computed from transcripts and manifests. Everything else goes through the
//! [`Judge`], which fails closed.

mod coherence;
mod execution;
mod generalization;
mod replication;

use std::path::PathBuf;

pub use coherence::{evaluate_consistency, evaluate_instruction_following};
pub use execution::{evaluate_execution_quality, evaluate_execution_static, BlockVerdicts, ExecutionQuality};
pub use generalization::{
    evaluate_generalizability, evaluate_generalizability_static, parse_proposal, GeneralizationTrial,
    ProbeKind, Proposal,
};
pub use replication::{
    de1_verdict, evaluate_reproducibility, evaluate_reproducibility_static, extract_metrics, replicate,
    rp3_verdict, verify_replication, within_tolerance, MetricsSource, ReplicationRecord, RELATIVE_TOLERANCE,
    ZERO_EPSILON,
};

use crate::bundle::BundleView;
use crate::checklist::{ItemId, Outcome, Verdict};
use crate::executor::{ExecLimits, Runner};
use crate::judge::{view_excerpts, Excerpt, Judge};

/// What evaluators need to run code.
pub struct ExecEnv<'a> {
    pub runner: &'a dyn Runner,
    pub limits: ExecLimits,
    pub workspace_base: PathBuf,
    pub keep_workspaces: bool,
    /// Prefix for workspace directory names.
    pub tag: String,
}

/// Bundle excerpts the template asks for, plus those extras whose kind the
/// template lists.
pub(crate) fn evidence_for(judge: &Judge, view: &BundleView, template: &str, extra: Vec<Excerpt>) -> Vec<Excerpt> {
    let kinds = &judge.templates().get(template).evidence;
    let mut evidence = view_excerpts(view, kinds);
    evidence.extend(extra.into_iter().filter(|e| kinds.contains(&e.artifact)));
    evidence
}

/// Task-level verdict as the AND of per-block verdicts.
pub fn and_over_blocks(item: ItemId, blocks: &[(usize, Verdict)], run_id: u32) -> Verdict {
    let failures: Vec<String> = blocks
        .iter()
        .filter(|(_, v)| v.outcome == Outcome::Fail)
        .map(|(i, v)| format!("block {i}: {}", v.rationale))
        .collect();
    if blocks.is_empty() {
        Verdict::fail(item, "no blocks evaluated", run_id)
    } else if failures.is_empty() {
        Verdict::pass(item, format!("all {} blocks pass", blocks.len()), run_id)
    } else {
        Verdict::fail(item, failures.join("; "), run_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_and() {
        let p = |i| (i, Verdict::pass(ItemId::C2, "ok", 1));
        let f = |i| (i, Verdict::fail(ItemId::C2, "wrong index", 1));
        assert_eq!(and_over_blocks(ItemId::C2, &[p(0), p(1)], 1).outcome, Outcome::Pass);
        let v = and_over_blocks(ItemId::C2, &[p(0), f(1)], 1);
        assert_eq!(v.outcome, Outcome::Fail);
        assert_eq!(v.rationale, "block 1: wrong index");
        assert_eq!(and_over_blocks(ItemId::C2, &[], 1).outcome, Outcome::Fail);
    }
}
