use serde::{Deserialize, Serialize};

use super::{and_over_blocks, evidence_for};
use crate::bundle::{ArtifactKind, BundleView};
use crate::checklist::{ItemId, Verdict};
use crate::executor::{c1_verdicts, ExecutionTranscript};
use crate::judge::{templates, transcript_excerpts, Judge, JudgeError, Purpose};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockVerdicts {
    pub index: usize,
    /// C1-C4 for this block.
    pub verdicts: Vec<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionQuality {
    /// Task-level C1-C4.
    pub task: Vec<Verdict>,
    pub blocks: Vec<BlockVerdicts>,
}

const JUDGED: [ItemId; 3] = [ItemId::C2, ItemId::C3, ItemId::C4];

/// C1 from the transcript, C2-C4 judged per block; task level is the AND
/// over blocks. When execution could not run at all, `transcript` is `None`
/// and `exec_failure` says why; every block then fails C1.
pub fn evaluate_execution_quality(
    transcript: Option<&ExecutionTranscript>,
    exec_failure: Option<&str>,
    view: &BundleView,
    judge: &Judge,
    run_id: u32,
) -> Result<ExecutionQuality, JudgeError> {
    let units = view.code_units().unwrap_or_default();
    let c1 = transcript.map(|t| c1_verdicts(t, run_id)).unwrap_or_default();
    let mut blocks = Vec::new();
    for u in units {
        let c1_block = c1.get(&u.index).cloned().unwrap_or_else(|| {
            let why = exec_failure.unwrap_or("no execution record");
            Verdict::fail(ItemId::C1, format!("not executed: {why}"), run_id)
        });
        let mut verdicts = vec![c1_block];
        let unit_evidence: Vec<_> = transcript
            .map(|t| {
                transcript_excerpts(ArtifactKind::Transcript, t)
                    .into_iter()
                    .filter(|e| e.locator == format!("unit {}", u.index))
                    .collect()
            })
            .unwrap_or_default();
        for item in JUDGED {
            let evidence = evidence_for(judge, view, templates::EXECUTION_BLOCK, unit_evidence.clone());
            verdicts.push(judge.verdict(
                view,
                item,
                Purpose::Block { index: u.index },
                templates::EXECUTION_BLOCK,
                evidence,
                run_id,
            )?);
        }
        blocks.push(BlockVerdicts { index: u.index, verdicts });
    }
    let task = ItemId::range(ItemId::C1, ItemId::C4)
        .enumerate()
        .map(|(pos, item)| {
            let per_block: Vec<_> = blocks.iter().map(|b| (b.index, b.verdicts[pos].clone())).collect();
            and_over_blocks(item, &per_block, run_id)
        })
        .collect();
    Ok(ExecutionQuality { task, blocks })
}

/// Task-level C1-C4 judged from whatever the view shows, without running
/// anything.
pub fn evaluate_execution_static(view: &BundleView, judge: &Judge, run_id: u32) -> Result<Vec<Verdict>, JudgeError> {
    ItemId::range(ItemId::C1, ItemId::C4)
        .map(|item| {
            let evidence = evidence_for(judge, view, templates::EXECUTION_STATIC, vec![]);
            judge.verdict(view, item, Purpose::Verdict, templates::EXECUTION_STATIC, evidence, run_id)
        })
        .collect()
}
