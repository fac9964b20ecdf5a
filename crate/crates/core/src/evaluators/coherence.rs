use super::evidence_for;
use crate::bundle::BundleView;
use crate::checklist::{ItemId, Verdict};
use crate::judge::{templates, Judge, JudgeError, Purpose};

/// CS1-CS5. Evidence is whatever of plan, report, code and recorded results
/// the view exposes.
pub fn evaluate_consistency(view: &BundleView, judge: &Judge, run_id: u32) -> Result<Vec<Verdict>, JudgeError> {
    ItemId::range(ItemId::CS1, ItemId::CS5)
        .map(|item| {
            let evidence = evidence_for(judge, view, templates::CONSISTENCY, vec![]);
            judge.verdict(view, item, Purpose::Verdict, templates::CONSISTENCY, evidence, run_id)
        })
        .collect()
}

/// TS1-TS4, or four NA verdicts for human-written repositories.
pub fn evaluate_instruction_following(
    view: &BundleView,
    judge: &Judge,
    run_id: u32,
) -> Result<Vec<Verdict>, JudgeError> {
    ItemId::range(ItemId::TS1, ItemId::TS4)
        .map(|item| {
            let rule = item.item().applicability;
            if !rule.applies(view.category(), view.has_demo(), view.proposes_new_method()) {
                return Ok(Verdict::not_applicable(item, run_id));
            }
            let evidence = evidence_for(judge, view, templates::INSTRUCTION_FOLLOWING, vec![]);
            judge.verdict(view, item, Purpose::Verdict, templates::INSTRUCTION_FOLLOWING, evidence, run_id)
        })
        .collect()
}
