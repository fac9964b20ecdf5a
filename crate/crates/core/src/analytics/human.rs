//! Comparison against human assessments.
//!
//! An assessment file mirrors a verdict document and adds `issues` and
//! `rated_quality`:
//!
//! ```json
//! {
//!   "task_id": "ioi",
//!   "Checklist": { "CS1_Results_vs_Conclusion": "FAIL" },
//!   "issues": [{ "item_id": "CS1_Results_vs_Conclusion", "description": "...", "link_id": "L1" }],
//!   "rated_quality": { "CS1_Results_vs_Conclusion": 5 }
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::AnalyticsError;
use crate::checklist::{
    parse_item_key, parse_json, parse_outcome_map, parse_rationale_map, Dimension, ItemId, Outcome,
    VerdictDocument,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub item_id: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumanAssessment {
    pub task_id: String,
    pub checklist: BTreeMap<ItemId, Outcome>,
    pub rationale: BTreeMap<ItemId, String>,
    pub issues: Vec<Issue>,
    pub rated_quality: BTreeMap<String, i64>,
}

fn malformed(e: impl std::fmt::Display) -> AnalyticsError {
    AnalyticsError::Malformed(e.to_string())
}

fn check_score(key: &str, value: i64) -> Result<(), AnalyticsError> {
    if (1..=5).contains(&value) {
        Ok(())
    } else {
        Err(AnalyticsError::OutOfRange { key: key.to_string(), value })
    }
}

pub fn parse_human_assessment(text: &str) -> Result<HumanAssessment, AnalyticsError> {
    let value = parse_json(text).map_err(malformed)?;
    let obj = value.as_object().ok_or_else(|| malformed("top level must be an object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "task_id" | "run_id" | "Checklist" | "Rationale" | "issues" | "rated_quality") {
            return Err(malformed(format!("unknown top-level key `{key}`")));
        }
    }
    let task_id = obj
        .get("task_id")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("`task_id` must be a string"))?
        .to_string();
    let checklist = parse_outcome_map(obj.get("Checklist")).map_err(malformed)?;
    let rationale = match obj.get("Rationale") {
        Some(v) => parse_rationale_map(Some(v)).map_err(malformed)?,
        None => BTreeMap::new(),
    };
    let issues: Vec<Issue> = match obj.get("issues") {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| malformed(format!("issues: {e}")))?,
        None => Vec::new(),
    };
    let mut rated_quality = BTreeMap::new();
    if let Some(v) = obj.get("rated_quality") {
        let map = v.as_object().ok_or_else(|| malformed("`rated_quality` must be an object"))?;
        for (key, score) in map {
            let n = score
                .as_i64()
                .ok_or_else(|| malformed(format!("rated quality for `{key}` must be an integer")))?;
            check_score(key, n)?;
            rated_quality.insert(key.clone(), n);
        }
    }
    Ok(HumanAssessment { task_id, checklist, rationale, issues, rated_quality })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemAgreement {
    pub agent: Outcome,
    pub human: Outcome,
    /// `None` when either side is NA.
    pub matched: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgreementRate {
    pub matched: usize,
    pub compared: usize,
    /// Undefined when nothing was comparable.
    pub percent: Option<f64>,
}

impl AgreementRate {
    fn add(&mut self, matched: bool) {
        self.compared += 1;
        self.matched += usize::from(matched);
        self.percent = Some(100.0 * self.matched as f64 / self.compared as f64);
    }

    fn merge(&mut self, other: &AgreementRate) {
        self.matched += other.matched;
        self.compared += other.compared;
        self.percent = (self.compared > 0).then(|| 100.0 * self.matched as f64 / self.compared as f64);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub task_ids: Vec<String>,
    #[serde(with = "super::keyed")]
    pub items: BTreeMap<ItemId, ItemAgreement>,
    pub per_dimension: BTreeMap<Dimension, AgreementRate>,
    pub overall: AgreementRate,
}

/// Compares outcomes over the agent document's items. Items NA on either
/// side are reported but left out of every denominator.
pub fn agreement(agent: &VerdictDocument, human: &HumanAssessment) -> Result<AgreementReport, AnalyticsError> {
    if agent.task_id != human.task_id {
        return Err(AnalyticsError::KeyMismatch(format!(
            "agent task `{}` vs human task `{}`",
            agent.task_id, human.task_id
        )));
    }
    let missing: Vec<_> =
        agent.entries.keys().filter(|id| !human.checklist.contains_key(id)).map(|id| id.key()).collect();
    if !missing.is_empty() {
        return Err(AnalyticsError::KeyMismatch(format!(
            "human assessment lacks {}",
            missing.join(", ")
        )));
    }
    let mut items = BTreeMap::new();
    let mut per_dimension: BTreeMap<Dimension, AgreementRate> = BTreeMap::new();
    let mut overall = AgreementRate::default();
    for (id, entry) in &agent.entries {
        let human_outcome = human.checklist[id];
        let matched = (entry.outcome != Outcome::Na && human_outcome != Outcome::Na)
            .then_some(entry.outcome == human_outcome);
        let rate = per_dimension.entry(id.dimension()).or_default();
        if let Some(m) = matched {
            rate.add(m);
            overall.add(m);
        }
        items.insert(*id, ItemAgreement { agent: entry.outcome, human: human_outcome, matched });
    }
    Ok(AgreementReport { task_ids: vec![agent.task_id.clone()], items, per_dimension, overall })
}

/// Pools several per-task reports into one. Item flags are not carried over
/// since keys repeat across tasks.
pub fn pool_agreement(reports: &[AgreementReport]) -> AgreementReport {
    let mut pooled = AgreementReport {
        task_ids: Vec::new(),
        items: BTreeMap::new(),
        per_dimension: BTreeMap::new(),
        overall: AgreementRate::default(),
    };
    for r in reports {
        pooled.task_ids.extend(r.task_ids.iter().cloned());
        for (dim, rate) in &r.per_dimension {
            pooled.per_dimension.entry(*dim).or_default().merge(rate);
        }
        pooled.overall.merge(&r.overall);
    }
    pooled
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VennCounts {
    pub both: usize,
    pub agent_only: usize,
    pub human_only: usize,
}

impl VennCounts {
    pub fn total(&self) -> usize {
        self.both + self.agent_only + self.human_only
    }
}

fn link_set(side: &str, issues: &[Issue]) -> Result<(BTreeSet<String>, usize), AnalyticsError> {
    let mut links = BTreeSet::new();
    let mut unlinked = 0;
    for issue in issues {
        match &issue.link_id {
            Some(link) => {
                if !links.insert(link.clone()) {
                    return Err(AnalyticsError::DuplicateLinkId(format!("{link} ({side})")));
                }
            }
            None => unlinked += 1,
        }
    }
    Ok((links, unlinked))
}

/// Partitions issues by explicit link ids. A link present on both sides
/// counts once as `both`.
pub fn issue_venn(agent: &[Issue], human: &[Issue]) -> Result<VennCounts, AnalyticsError> {
    let (agent_links, agent_unlinked) = link_set("agent", agent)?;
    let (human_links, human_unlinked) = link_set("human", human)?;
    let both = agent_links.intersection(&human_links).count();
    Ok(VennCounts {
        both,
        agent_only: agent_unlinked + agent_links.len() - both,
        human_only: human_unlinked + human_links.len() - both,
    })
}

/// One issue per FAIL verdict, linked by `<task>/<item key>`.
pub fn agent_issues(doc: &VerdictDocument) -> Vec<Issue> {
    doc.entries
        .iter()
        .filter(|(_, e)| e.outcome == Outcome::Fail)
        .map(|(id, e)| Issue {
            item_id: id.key().to_string(),
            description: e.rationale.clone(),
            link_id: Some(format!("{}/{}", doc.task_id, id.key())),
        })
        .collect()
}

/// Arithmetic mean per key over the assessments that rate it.
pub fn mean_rated_quality(assessments: &[HumanAssessment]) -> Result<BTreeMap<String, f64>, AnalyticsError> {
    let mut sums: BTreeMap<&str, (i64, usize)> = BTreeMap::new();
    for a in assessments {
        for (key, score) in &a.rated_quality {
            check_score(key, *score)?;
            let slot = sums.entry(key.as_str()).or_default();
            slot.0 += score;
            slot.1 += 1;
        }
    }
    Ok(sums.into_iter().map(|(k, (s, n))| (k.to_string(), s as f64 / n as f64)).collect())
}

/// Item ids named by issues that do not parse as checklist keys.
pub fn unknown_issue_items(issues: &[Issue]) -> Vec<String> {
    issues.iter().filter(|i| parse_item_key(&i.item_id).is_err()).map(|i| i.item_id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checklist::Verdict;
    use Outcome::{Fail as F, Na as N, Pass as P};

    fn agent(outcomes: &[(ItemId, Outcome)]) -> VerdictDocument {
        VerdictDocument::from_verdicts(
            "t",
            1,
            outcomes.iter().map(|(id, o)| Verdict { item_id: *id, outcome: *o, rationale: "r".into(), run_id: 1 }),
        )
    }

    fn human(outcomes: &[(ItemId, Outcome)]) -> HumanAssessment {
        HumanAssessment {
            task_id: "t".into(),
            checklist: outcomes.iter().copied().collect(),
            rationale: BTreeMap::new(),
            issues: vec![],
            rated_quality: BTreeMap::new(),
        }
    }

    fn issue(link: Option<&str>) -> Issue {
        Issue { item_id: "CS1_Results_vs_Conclusion".into(), description: "d".into(), link_id: link.map(String::from) }
    }

    #[test]
    fn parses_assessment_file() {
        let text = r#"{
            "task_id": "ioi",
            "Checklist": {"CS1_Results_vs_Conclusion": "FAIL", "C1_Runnable": "PASS"},
            "issues": [{"item_id": "CS1_Results_vs_Conclusion", "description": "overclaims", "link_id": "L1"}],
            "rated_quality": {"CS1_Results_vs_Conclusion": 5}
        }"#;
        let a = parse_human_assessment(text).unwrap();
        assert_eq!(a.checklist[&ItemId::CS1], F);
        assert_eq!(a.issues[0].link_id.as_deref(), Some("L1"));
        assert_eq!(a.rated_quality["CS1_Results_vs_Conclusion"], 5);
        let bad = text.replace(": 5}", ": 6}");
        assert_eq!(
            parse_human_assessment(&bad),
            Err(AnalyticsError::OutOfRange { key: "CS1_Results_vs_Conclusion".into(), value: 6 })
        );
        assert!(matches!(parse_human_assessment("{\"task_id\": 1}"), Err(AnalyticsError::Malformed(_))));
    }

    #[test]
    fn identical_vectors_agree_fully() {
        let v = [(ItemId::CS1, P), (ItemId::C1, F), (ItemId::GT1, P)];
        let r = agreement(&agent(&v), &human(&v)).unwrap();
        assert_eq!(r.overall.percent, Some(100.0));
        assert_eq!(r.per_dimension[&Dimension::Generalizability].compared, 1);
    }

    #[test]
    fn eight_of_ten() {
        let ids: Vec<_> = ItemId::ALL[..10].to_vec();
        let a: Vec<_> = ids.iter().map(|id| (*id, P)).collect();
        let h: Vec<_> = ids.iter().enumerate().map(|(i, id)| (*id, if i < 2 { F } else { P })).collect();
        let r = agreement(&agent(&a), &human(&h)).unwrap();
        assert_eq!(r.overall.matched, 8);
        assert_eq!(r.overall.percent, Some(80.0));
        assert_eq!(r.items[&ids[0]].matched, Some(false));
    }

    #[test]
    fn na_excluded_and_all_na_undefined() {
        let a = [(ItemId::CS1, P), (ItemId::CS2, N)];
        let h = [(ItemId::CS1, N), (ItemId::CS2, P)];
        let r = agreement(&agent(&a), &human(&h)).unwrap();
        assert_eq!(r.overall.percent, None);
        assert_eq!(r.items[&ItemId::CS1].matched, None);
    }

    #[test]
    fn key_mismatch() {
        let a = agent(&[(ItemId::CS1, P), (ItemId::CS2, P)]);
        assert!(matches!(agreement(&a, &human(&[(ItemId::CS1, P)])), Err(AnalyticsError::KeyMismatch(_))));
        let mut h = human(&[(ItemId::CS1, P), (ItemId::CS2, P)]);
        h.task_id = "other".into();
        assert!(matches!(agreement(&a, &h), Err(AnalyticsError::KeyMismatch(_))));
    }

    #[test]
    fn pooling_sums_counts() {
        let a = agent(&[(ItemId::CS1, P), (ItemId::CS2, P)]);
        let r1 = agreement(&a, &human(&[(ItemId::CS1, P), (ItemId::CS2, F)])).unwrap();
        let r2 = agreement(&a, &human(&[(ItemId::CS1, P), (ItemId::CS2, P)])).unwrap();
        let pooled = pool_agreement(&[r1, r2]);
        assert_eq!(pooled.overall.percent, Some(75.0));
        assert_eq!(pooled.task_ids.len(), 2);
    }

    #[test]
    fn venn_cases() {
        let agent_side = vec![issue(None), issue(None), issue(None)];
        let human_side = vec![issue(None), issue(None)];
        assert_eq!(issue_venn(&agent_side, &human_side).unwrap(), VennCounts { both: 0, agent_only: 3, human_only: 2 });
        let v = issue_venn(&[issue(Some("x")), issue(None)], &[issue(Some("x")), issue(Some("y"))]).unwrap();
        assert_eq!(v, VennCounts { both: 1, agent_only: 1, human_only: 1 });
        assert_eq!(
            issue_venn(&[issue(Some("x")), issue(Some("x"))], &[]),
            Err(AnalyticsError::DuplicateLinkId("x (agent)".into()))
        );
    }

    #[test]
    fn agent_issues_follow_failures() {
        let doc = agent(&[(ItemId::CS1, F), (ItemId::CS2, P), (ItemId::C1, F)]);
        let issues = agent_issues(&doc);
        assert_eq!(issues.len(), 2);
        assert_eq!(issues[0].link_id.as_deref(), Some("t/CS1_Results_vs_Conclusion"));
        assert!(unknown_issue_items(&issues).is_empty());
    }

    #[test]
    fn rated_quality_means() {
        let with = |scores: &[i64]| -> Vec<HumanAssessment> {
            scores
                .iter()
                .map(|s| {
                    let mut h = human(&[]);
                    h.rated_quality.insert("k".into(), *s);
                    h
                })
                .collect()
        };
        let m = mean_rated_quality(&with(&[5, 5, 4])).unwrap();
        assert!((m["k"] - 14.0 / 3.0).abs() < 1e-9);
        assert!((m["k"] - 4.667).abs() < 1e-3);
        assert_eq!(mean_rated_quality(&with(&[3])).unwrap()["k"], 3.0);
        assert!(matches!(mean_rated_quality(&with(&[6])), Err(AnalyticsError::OutOfRange { .. })));
    }
}
