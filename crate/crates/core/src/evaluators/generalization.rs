use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{evidence_for, ExecEnv};
use crate::bundle::{derive_view, ArtifactKind, BundleView, CodeUnit, ResearchBundle, UnitKind, ViewMode};
use crate::checklist::{ItemId, Outcome, Verdict};
use crate::config::MAX_TRIALS;
use crate::executor::{run_units, ExecError, ExecutionTranscript};
use crate::judge::{parse_judgement, templates, transcript_excerpts, Excerpt, Judge, JudgeError, Purpose};
use crate::sandbox::{create_workspace, teardown, verify_integrity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    NewModel,
    NewData,
    NewTask,
}

impl ProbeKind {
    pub fn for_item(item: ItemId) -> Option<ProbeKind> {
        match item {
            ItemId::GT1 => Some(ProbeKind::NewModel),
            ItemId::GT2 => Some(ProbeKind::NewData),
            ItemId::GT3 => Some(ProbeKind::NewTask),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub kind: ProbeKind,
    pub description: String,
    /// Source of the probe unit.
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneralizationTrial {
    pub item_id: ItemId,
    /// 1-based.
    pub trial_index: u32,
    pub proposal: Option<Proposal>,
    pub transcript: Option<ExecutionTranscript>,
    pub assessment: Option<Verdict>,
    pub verified: bool,
    pub note: String,
}

impl GeneralizationTrial {
    fn render(&self) -> String {
        let mut out = format!("trial {}: ", self.trial_index);
        match &self.proposal {
            Some(p) => {
                let _ = writeln!(out, "{:?} probe: {}", p.kind, p.description);
                let _ = writeln!(out, "--- probe code ---\n{}", p.code.trim_end());
            }
            None => out.push_str("no usable proposal\n"),
        }
        if let Some(t) = &self.transcript {
            let _ = writeln!(out, "--- probe execution ---\n{}", t.render().trim_end());
        }
        if let Some(a) = &self.assessment {
            let _ = writeln!(out, "assessment: {} ({})", a.outcome, a.rationale);
        }
        if !self.note.is_empty() {
            let _ = writeln!(out, "note: {}", self.note);
        }
        out
    }
}

/// Parses `{"kind", "description", "code"}`. Strict mode wants exactly these
/// keys in a bare object.
pub fn parse_proposal(raw: &str, strict: bool) -> Result<Proposal, JudgeError> {
    let bad = |why: &str| JudgeError::UnparseableJudgement(why.to_string());
    let value: Value = if strict {
        serde_json::from_str(raw.trim()).map_err(|_| bad("proposal is not a single JSON object"))?
    } else {
        let start = raw.find('{').ok_or_else(|| bad("no JSON object in proposal"))?;
        serde_json::Deserializer::from_str(&raw[start..])
            .into_iter::<Value>()
            .next()
            .and_then(Result::ok)
            .ok_or_else(|| bad("no JSON object in proposal"))?
    };
    let obj = value.as_object().ok_or_else(|| bad("proposal is not an object"))?;
    if strict && obj.len() != 3 {
        return Err(bad("proposal must have exactly `kind`, `description` and `code`"));
    }
    let proposal: Proposal = serde_json::from_value(value.clone()).map_err(|e| bad(&e.to_string()))?;
    if proposal.code.trim().is_empty() {
        return Err(bad("proposal has empty `code`"));
    }
    Ok(proposal)
}

fn run_probe(
    bundle: &Arc<ResearchBundle>,
    env: &ExecEnv<'_>,
    item: ItemId,
    trial: u32,
    code: &str,
) -> (Option<ExecutionTranscript>, String) {
    let tag = format!("{}-{}-t{trial}", env.tag, item.code().to_ascii_lowercase());
    let ws = match create_workspace(bundle, &tag, &env.workspace_base) {
        Ok(ws) => ws,
        Err(e) => return (None, format!("probe workspace: {e}")),
    };
    let unit = CodeUnit { index: 0, kind: UnitKind::Script, source: code.to_string(), recorded_output: None, declared_inputs: vec![] };
    let mut notes = Vec::new();
    let transcript = match run_units(&ws, std::slice::from_ref(&unit), &env.limits, env.runner) {
        Ok(t) => Some(t),
        Err(ExecError::RunnerCrashed { message, transcript }) => {
            notes.push(format!("runner crashed: {message}"));
            Some(*transcript)
        }
        Err(e) => {
            notes.push(e.to_string());
            None
        }
    };
    match verify_integrity(&ws) {
        Ok(r) if !r.is_clean() => notes.push(format!("probe modified workspace outside output/: {}", r.summary())),
        Ok(_) => {}
        Err(e) => notes.push(format!("integrity check: {e}")),
    }
    teardown(&ws, env.keep_workspaces);
    (transcript, notes.join("; "))
}

fn evaluate_item(
    bundle: &Arc<ResearchBundle>,
    view: &BundleView,
    item: ItemId,
    env: &ExecEnv<'_>,
    judge: &Judge,
    strict: bool,
    max_trials: u32,
    run_id: u32,
) -> Result<(Verdict, Vec<GeneralizationTrial>), JudgeError> {
    let expected_kind = ProbeKind::for_item(item).expect("GT item");
    let mut trials: Vec<GeneralizationTrial> = Vec::new();
    for trial in 1..=max_trials.min(MAX_TRIALS) {
        let history: Vec<Excerpt> = trials
            .iter()
            .map(|t| Excerpt::new(ArtifactKind::Probe, format!("trial {}", t.trial_index), t.render()))
            .collect();
        let evidence = evidence_for(judge, view, templates::GENERALIZABILITY_PROPOSE, history);
        let request =
            judge.request(view, Some(item), Purpose::Propose { trial }, templates::GENERALIZABILITY_PROPOSE, evidence)?;
        let mut record = GeneralizationTrial {
            item_id: item,
            trial_index: trial,
            proposal: None,
            transcript: None,
            assessment: None,
            verified: false,
            note: String::new(),
        };
        let proposal = match judge.ask(&request, |raw| parse_proposal(raw, strict)) {
            Ok(p) if p.kind == expected_kind => p,
            Ok(p) => {
                record.note = format!("proposal kind {:?} does not match {:?}", p.kind, expected_kind);
                record.proposal = Some(p);
                trials.push(record);
                continue;
            }
            Err(why) => {
                record.note = format!("proposal unavailable: {why}");
                trials.push(record);
                continue;
            }
        };
        let (transcript, note) = run_probe(bundle, env, item, trial, &proposal.code);
        record.proposal = Some(proposal);
        record.transcript = transcript;
        record.note = note;

        let mut probe = vec![Excerpt::new(ArtifactKind::Probe, format!("trial {trial}"), record.render())];
        if let Some(t) = &record.transcript {
            probe.extend(transcript_excerpts(ArtifactKind::Probe, t));
        }
        let evidence = evidence_for(judge, view, templates::GENERALIZABILITY_ASSESS, probe);
        let request =
            judge.request(view, Some(item), Purpose::Assess { trial }, templates::GENERALIZABILITY_ASSESS, evidence)?;
        let assessment = judge
            .ask(&request, |raw| parse_judgement(raw, item, run_id, strict))
            .unwrap_or_else(|why| Verdict::fail(item, why, run_id));
        record.verified = assessment.outcome == Outcome::Pass;
        record.assessment = Some(assessment.clone());
        trials.push(record);
        if assessment.outcome == Outcome::Pass {
            let why = format!("verified on trial {trial}: {}", assessment.rationale);
            return Ok((Verdict::pass(item, why, run_id), trials));
        }
    }
    let last = trials
        .last()
        .map(|t| t.assessment.as_ref().map(|a| a.rationale.clone()).unwrap_or_else(|| t.note.clone()))
        .unwrap_or_default();
    let why = format!("not verified after {} trials; last: {last}", trials.len());
    Ok((Verdict::fail(item, why, run_id), trials))
}

/// GT1-GT3 through propose, probe and assess trials; at most three probes
/// per item, each in its own workspace.
pub fn evaluate_generalizability(
    bundle: &Arc<ResearchBundle>,
    env: &ExecEnv<'_>,
    judge: &Judge,
    strict: bool,
    max_trials: u32,
    run_id: u32,
) -> Result<(Vec<Verdict>, Vec<GeneralizationTrial>), JudgeError> {
    let view = derive_view(bundle.clone(), ViewMode::Full);
    let mut verdicts = Vec::new();
    let mut log = Vec::new();
    for item in ItemId::range(ItemId::GT1, ItemId::GT3) {
        let rule = item.item().applicability;
        if !rule.applies(bundle.category, bundle.has_demo, bundle.proposes_new_method) {
            verdicts.push(Verdict::not_applicable(item, run_id));
            continue;
        }
        let (v, trials) = evaluate_item(bundle, &view, item, env, judge, strict, max_trials, run_id)?;
        verdicts.push(v);
        log.extend(trials);
    }
    Ok((verdicts, log))
}

/// GT1-GT3 judged from the view alone.
pub fn evaluate_generalizability_static(view: &BundleView, judge: &Judge, run_id: u32) -> Result<Vec<Verdict>, JudgeError> {
    ItemId::range(ItemId::GT1, ItemId::GT3)
        .map(|item| {
            let rule = item.item().applicability;
            if !rule.applies(view.category(), view.has_demo(), view.proposes_new_method()) {
                return Ok(Verdict::not_applicable(item, run_id));
            }
            let evidence = evidence_for(judge, view, templates::GENERALIZABILITY_STATIC, vec![]);
            judge.verdict(view, item, Purpose::Verdict, templates::GENERALIZABILITY_STATIC, evidence, run_id)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proposal_parsing() {
        let p = parse_proposal(r#"{"kind":"new_data","description":"d","code":"echo 1"}"#, true).unwrap();
        assert_eq!(p.kind, ProbeKind::NewData);
        assert!(parse_proposal(r#"{"kind":"new_data","description":"d","code":""}"#, true).is_err());
        assert!(parse_proposal(r#"{"kind":"other","description":"d","code":"x"}"#, true).is_err());
        assert!(parse_proposal(r#"{"verdict":"PASS","rationale":"x"}"#, true).is_err());
        let embedded = "Here: {\"kind\":\"new_model\",\"description\":\"d\",\"code\":\"x\"}";
        assert!(parse_proposal(embedded, true).is_err());
        assert_eq!(parse_proposal(embedded, false).unwrap().kind, ProbeKind::NewModel);
    }
}
