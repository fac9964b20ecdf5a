//! Multi-run aggregation and comparison statistics. Everything here is a
//! pure function of its inputs.

mod human;
mod rates;
mod tables;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use human::{
    agent_issues, agreement, issue_venn, mean_rated_quality, parse_human_assessment, pool_agreement,
    unknown_issue_items, AgreementRate, AgreementReport, HumanAssessment, Issue, ItemAgreement, VennCounts,
};
pub use rates::{failure_rates, Grouping, RateRow};
pub use tables::{agreement_csv, means_csv, rates_csv, stability_csv};

use crate::bundle::Category;
use crate::checklist::{Entry, ItemId, Outcome, VerdictDocument};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalyticsError {
    #[error("key mismatch: {0}")]
    KeyMismatch(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("rated quality for {key} is {value}, outside 1..5")]
    OutOfRange { key: String, value: i64 },
    #[error("duplicate link_id `{0}`")]
    DuplicateLinkId(String),
    #[error("malformed assessment: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    And,
    Majority,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::And => "and",
            Policy::Majority => "majority",
        }
    }

    pub fn parse(s: &str) -> Option<Policy> {
        match s {
            "and" => Some(Policy::And),
            "majority" => Some(Policy::Majority),
            _ => None,
        }
    }
}

/// Verdict documents for one task across repeated runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSet {
    pub task_id: String,
    pub category: Option<Category>,
    pub runs: Vec<VerdictDocument>,
}

impl RunSet {
    /// Checks that the runs share task id and item-key set.
    pub fn new(runs: Vec<VerdictDocument>) -> Result<RunSet, AnalyticsError> {
        let first = runs.first().ok_or_else(|| AnalyticsError::Empty("run set has no runs".into()))?;
        let keys = first.item_ids();
        for (i, r) in runs.iter().enumerate() {
            if r.task_id != first.task_id {
                return Err(AnalyticsError::KeyMismatch(format!(
                    "run {} has task_id `{}`, expected `{}`",
                    i + 1,
                    r.task_id,
                    first.task_id
                )));
            }
            let other = r.item_ids();
            if other != keys {
                let diff: Vec<_> = keys.symmetric_difference(&other).map(|id| id.key()).collect();
                return Err(AnalyticsError::KeyMismatch(format!(
                    "run {} differs in item keys: {}",
                    i + 1,
                    diff.join(", ")
                )));
            }
        }
        Ok(RunSet { task_id: first.task_id.clone(), category: None, runs })
    }

    pub fn with_category(mut self, category: Category) -> Self {
        self.category = Some(category);
        self
    }

    pub fn item_ids(&self) -> BTreeSet<ItemId> {
        self.runs[0].item_ids()
    }

    fn column(&self, id: ItemId) -> Vec<&Entry> {
        self.runs.iter().map(|r| &r.entries[&id]).collect()
    }

    /// The aggregate's run id: the shared one, or 0 when runs disagree.
    fn run_id(&self) -> u32 {
        let first = self.runs[0].run_id;
        if self.runs.iter().all(|r| r.run_id == first) {
            first
        } else {
            0
        }
    }
}

/// Distinct rationales of the entries with `outcome`, in run order.
fn joined(entries: &[&Entry], outcome: Outcome) -> String {
    let mut seen = BTreeSet::new();
    let mut parts = Vec::new();
    for e in entries.iter().filter(|e| e.outcome == outcome) {
        if seen.insert(e.rationale.as_str()) {
            parts.push(e.rationale.as_str());
        }
    }
    parts.join(" | ")
}

/// Per item over non-NA runs: any FAIL gives FAIL, otherwise PASS; all NA
/// gives NA.
pub fn and_outcome(outcomes: &[Outcome]) -> Outcome {
    if outcomes.contains(&Outcome::Fail) {
        Outcome::Fail
    } else if outcomes.contains(&Outcome::Pass) {
        Outcome::Pass
    } else {
        Outcome::Na
    }
}

/// Per item over the k non-NA runs: FAIL iff at least ceil((k+1)/2) of them
/// fail; all NA gives NA.
pub fn majority_outcome(outcomes: &[Outcome]) -> Outcome {
    let k = outcomes.iter().filter(|o| **o != Outcome::Na).count();
    if k == 0 {
        return Outcome::Na;
    }
    let fails = outcomes.iter().filter(|o| **o == Outcome::Fail).count();
    if fails >= (k + 2) / 2 {
        Outcome::Fail
    } else {
        Outcome::Pass
    }
}

fn aggregate_with(rs: &RunSet, rule: fn(&[Outcome]) -> Outcome) -> VerdictDocument {
    let mut doc = VerdictDocument::new(rs.task_id.clone(), rs.run_id());
    for id in rs.item_ids() {
        let column = rs.column(id);
        let outcomes: Vec<_> = column.iter().map(|e| e.outcome).collect();
        let outcome = rule(&outcomes);
        doc.entries.insert(id, Entry { outcome, rationale: joined(&column, outcome) });
    }
    doc
}

/// AND aggregation; the rationale joins the distinct FAIL rationales.
pub fn and_aggregate(rs: &RunSet) -> VerdictDocument {
    aggregate_with(rs, and_outcome)
}

/// Majority aggregation; the rationale joins the distinct rationales of the
/// runs that agree with the result.
pub fn majority_aggregate(rs: &RunSet) -> VerdictDocument {
    aggregate_with(rs, majority_outcome)
}

pub fn aggregate(rs: &RunSet, policy: Policy) -> VerdictDocument {
    match policy {
        Policy::And => and_aggregate(rs),
        Policy::Majority => majority_aggregate(rs),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityClass {
    /// All runs agree.
    Perfect,
    /// Exactly one run differs from the others (three or more runs).
    OneDissent,
    Split,
}

impl StabilityClass {
    pub fn as_str(self) -> &'static str {
        match self {
            StabilityClass::Perfect => "perfect",
            StabilityClass::OneDissent => "one_dissent",
            StabilityClass::Split => "split",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemStability {
    pub class: StabilityClass,
    /// Share of runs with the most common outcome.
    pub modal_fraction: f64,
}

pub fn classify_stability(outcomes: &[Outcome]) -> ItemStability {
    let n = outcomes.len();
    let mut counts: BTreeMap<Outcome, usize> = BTreeMap::new();
    for o in outcomes {
        *counts.entry(*o).or_default() += 1;
    }
    let modal = counts.values().copied().max().unwrap_or(0);
    let class = if modal == n {
        StabilityClass::Perfect
    } else if n >= 3 && modal == n - 1 {
        StabilityClass::OneDissent
    } else {
        StabilityClass::Split
    };
    let modal_fraction = if n == 0 { 0.0 } else { modal as f64 / n as f64 };
    ItemStability { class, modal_fraction }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Proportions {
    pub perfect: f64,
    pub one_dissent: f64,
    pub split: f64,
    pub count: usize,
}

impl Proportions {
    fn from_classes(classes: impl IntoIterator<Item = StabilityClass>) -> Proportions {
        let (mut p, mut o, mut s) = (0usize, 0usize, 0usize);
        for c in classes {
            match c {
                StabilityClass::Perfect => p += 1,
                StabilityClass::OneDissent => o += 1,
                StabilityClass::Split => s += 1,
            }
        }
        let n = p + o + s;
        let frac = |x: usize| if n == 0 { 0.0 } else { x as f64 / n as f64 };
        Proportions { perfect: frac(p), one_dissent: frac(o), split: frac(s), count: n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityTable {
    pub task_id: String,
    pub runs: usize,
    /// Keyed by item key, in checklist order.
    #[serde(with = "keyed")]
    pub items: BTreeMap<ItemId, ItemStability>,
    /// Over all items, and per dimension.
    pub proportions: BTreeMap<String, Proportions>,
}

pub fn stability(rs: &RunSet) -> StabilityTable {
    let items: BTreeMap<_, _> = rs
        .item_ids()
        .into_iter()
        .map(|id| {
            let outcomes: Vec<_> = rs.column(id).iter().map(|e| e.outcome).collect();
            (id, classify_stability(&outcomes))
        })
        .collect();
    let mut proportions = BTreeMap::new();
    proportions.insert("overall".to_string(), Proportions::from_classes(items.values().map(|s| s.class)));
    let mut by_dim: BTreeMap<&str, Vec<StabilityClass>> = BTreeMap::new();
    for (id, s) in &items {
        by_dim.entry(id.dimension().as_str()).or_default().push(s.class);
    }
    for (dim, classes) in by_dim {
        proportions.insert(dim.to_string(), Proportions::from_classes(classes));
    }
    StabilityTable { task_id: rs.task_id.clone(), runs: rs.runs.len(), items, proportions }
}

/// Per-item proportions of stability classes across tasks.
pub fn stability_proportions(runsets: &[RunSet]) -> BTreeMap<ItemId, Proportions> {
    let mut classes: BTreeMap<ItemId, Vec<StabilityClass>> = BTreeMap::new();
    for rs in runsets {
        for (id, s) in stability(rs).items {
            classes.entry(id).or_default().push(s.class);
        }
    }
    classes.into_iter().map(|(id, c)| (id, Proportions::from_classes(c))).collect()
}

/// Serde for maps keyed by `ItemId`, written with the full item key.
pub(crate) mod keyed {
    use std::collections::BTreeMap;

    use serde::de::{DeserializeOwned, Error};
    use serde::ser::SerializeMap;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::checklist::ItemId;

    pub fn serialize<T: Serialize, S: Serializer>(map: &BTreeMap<ItemId, T>, s: S) -> Result<S::Ok, S::Error> {
        let mut out = s.serialize_map(Some(map.len()))?;
        for (id, v) in map {
            out.serialize_entry(id.key(), v)?;
        }
        out.end()
    }

    pub fn deserialize<'de, T: DeserializeOwned, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<ItemId, T>, D::Error> {
        let raw = BTreeMap::<String, T>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| ItemId::from_key(&k).map(|id| (id, v)).ok_or_else(|| D::Error::custom(format!("unknown item key `{k}`"))))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checklist::Verdict;
    use proptest::prelude::*;
    use Outcome::{Fail as F, Na as N, Pass as P};

    fn doc(run: u32, outcomes: &[(ItemId, Outcome)]) -> VerdictDocument {
        VerdictDocument::from_verdicts(
            "t",
            run,
            outcomes.iter().map(|(id, o)| Verdict { item_id: *id, outcome: *o, rationale: format!("{o} in run {run}"), run_id: run }),
        )
    }

    #[test]
    fn named_cases() {
        assert_eq!(and_outcome(&[P, P, P]), P);
        assert_eq!(and_outcome(&[P, F, P]), F);
        assert_eq!(and_outcome(&[N, N, N]), N);
        assert_eq!(and_outcome(&[N, P, N]), P);
        assert_eq!(majority_outcome(&[P, F, F]), F);
        assert_eq!(majority_outcome(&[P, P, F]), P);
        assert_eq!(majority_outcome(&[F, N, P]), P);
        assert_eq!(majority_outcome(&[F, F, P, P]), P);
        assert_eq!(majority_outcome(&[F, F, F, P]), F);
    }

    #[test]
    fn and_rationale_collects_failures() {
        let rs = RunSet::new(vec![doc(1, &[(ItemId::CS1, P)]), doc(2, &[(ItemId::CS1, F)]), doc(3, &[(ItemId::CS1, F)])]).unwrap();
        let agg = and_aggregate(&rs);
        assert_eq!(agg.entries[&ItemId::CS1].rationale, "FAIL in run 2 | FAIL in run 3");
        assert_eq!(agg.run_id, 0);
    }

    #[test]
    fn identical_runs_aggregate_to_themselves() {
        let d = doc(7, &[(ItemId::CS1, P), (ItemId::C1, F), (ItemId::TS1, N)]);
        let rs = RunSet::new(vec![d.clone(), d.clone(), d.clone()]).unwrap();
        assert_eq!(and_aggregate(&rs), d);
        assert_eq!(majority_aggregate(&rs), d);
    }

    #[test]
    fn key_mismatch() {
        let a = doc(1, &[(ItemId::CS1, P)]);
        let b = doc(1, &[(ItemId::CS2, P)]);
        assert!(matches!(RunSet::new(vec![a.clone(), b]), Err(AnalyticsError::KeyMismatch(_))));
        let mut c = a.clone();
        c.task_id = "other".into();
        assert!(matches!(RunSet::new(vec![a, c]), Err(AnalyticsError::KeyMismatch(_))));
        assert!(matches!(RunSet::new(vec![]), Err(AnalyticsError::Empty(_))));
    }

    #[test]
    fn stability_classes() {
        assert_eq!(classify_stability(&[P, P, P]).class, StabilityClass::Perfect);
        assert_eq!(classify_stability(&[P, P, F]).class, StabilityClass::OneDissent);
        assert_eq!(classify_stability(&[P, F, N]).class, StabilityClass::Split);
        assert_eq!(classify_stability(&[P, F]).class, StabilityClass::Split);
        let s = classify_stability(&[P, P, P, F, F]);
        assert_eq!(s.class, StabilityClass::Split);
        assert!((s.modal_fraction - 0.6).abs() < 1e-12);
    }

    #[test]
    fn stability_table_proportions() {
        let rs = RunSet::new(vec![
            doc(1, &[(ItemId::CS1, P), (ItemId::C1, P)]),
            doc(1, &[(ItemId::CS1, P), (ItemId::C1, F)]),
            doc(1, &[(ItemId::CS1, P), (ItemId::C1, P)]),
        ])
        .unwrap();
        let t = stability(&rs);
        assert_eq!(t.items[&ItemId::C1].class, StabilityClass::OneDissent);
        assert_eq!(t.proportions["overall"].perfect, 0.5);
        assert_eq!(t.proportions["Coherence"].perfect, 1.0);
        assert_eq!(t.proportions["Reproducibility"].one_dissent, 1.0);
        let per_item = stability_proportions(&[rs.clone(), rs]);
        assert_eq!(per_item[&ItemId::C1].one_dissent, 1.0);
        assert_eq!(per_item[&ItemId::C1].count, 2);
    }

    fn outcome() -> impl Strategy<Value = Outcome> {
        prop_oneof![Just(P), Just(F), Just(N)]
    }

    proptest! {
        #[test]
        fn and_is_monotone(runs in proptest::collection::vec(outcome(), 1..6), flip in 0usize..6) {
            let flip = flip % runs.len();
            if runs[flip] == P {
                let mut flipped = runs.clone();
                flipped[flip] = F;
                prop_assert!(!(and_outcome(&runs) == F && and_outcome(&flipped) == P));
                prop_assert_eq!(and_outcome(&flipped), F);
            }
        }

        #[test]
        fn permutation_invariant(mut runs in proptest::collection::vec(outcome(), 1..6), seed in any::<u64>()) {
            let (a, m, s) = (and_outcome(&runs), majority_outcome(&runs), classify_stability(&runs));
            let n = runs.len();
            runs.rotate_left((seed as usize) % n);
            runs.reverse();
            prop_assert_eq!(a, and_outcome(&runs));
            prop_assert_eq!(m, majority_outcome(&runs));
            prop_assert_eq!(s, classify_stability(&runs));
        }
    }
}
