use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{aggregate, AnalyticsError, Policy, RunSet};
use crate::checklist::{Dimension, ItemId, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Item,
    Dimension,
    /// One row per (category, item).
    Category,
}

impl Grouping {
    pub fn parse(s: &str) -> Option<Grouping> {
        match s {
            "item" => Some(Grouping::Item),
            "dimension" => Some(Grouping::Dimension),
            "category" => Some(Grouping::Category),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub group: String,
    pub fails: usize,
    pub passes: usize,
    /// `FAIL / (PASS + FAIL)`; undefined when no task had a PASS or FAIL.
    pub rate: Option<f64>,
}

const UNSPECIFIED: &str = "unspecified";

/// Sort key: category, then item in checklist order, or dimension.
type GroupKey = (&'static str, Option<ItemId>, Option<Dimension>);

fn group_key(grouping: Grouping, rs: &RunSet, id: ItemId) -> GroupKey {
    match grouping {
        Grouping::Item => ("", Some(id), None),
        Grouping::Dimension => ("", None, Some(id.dimension())),
        Grouping::Category => (rs.category.map(|c| c.as_str()).unwrap_or(UNSPECIFIED), Some(id), None),
    }
}

fn group_label((cat, id, dim): GroupKey) -> String {
    let tail = match (id, dim) {
        (Some(id), _) => id.key(),
        (None, Some(dim)) => dim.as_str(),
        (None, None) => "",
    };
    if cat.is_empty() {
        tail.to_string()
    } else {
        format!("{cat}/{tail}")
    }
}

/// Failure rates over the per-task aggregates, one row per group. NA is
/// excluded from both counts.
pub fn failure_rates(
    runsets: &[RunSet],
    grouping: Grouping,
    policy: Policy,
) -> Result<Vec<RateRow>, AnalyticsError> {
    if runsets.is_empty() {
        return Err(AnalyticsError::Empty("no run sets".into()));
    }
    let mut counts: BTreeMap<GroupKey, (usize, usize)> = BTreeMap::new();
    for rs in runsets {
        for (id, entry) in &aggregate(rs, policy).entries {
            let slot = counts.entry(group_key(grouping, rs, *id)).or_default();
            match entry.outcome {
                Outcome::Fail => slot.0 += 1,
                Outcome::Pass => slot.1 += 1,
                Outcome::Na => {}
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|(key, (fails, passes))| RateRow {
            group: group_label(key),
            fails,
            passes,
            rate: (fails + passes > 0).then(|| fails as f64 / (fails + passes) as f64),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::Category;
    use crate::checklist::{Verdict, VerdictDocument};

    fn rs(task: &str, outcomes: &[(ItemId, Outcome)]) -> RunSet {
        let doc = VerdictDocument::from_verdicts(
            task,
            1,
            outcomes.iter().map(|(id, o)| Verdict { item_id: *id, outcome: *o, rationale: String::new(), run_id: 1 }),
        );
        RunSet::new(vec![doc.clone(), doc.clone(), doc]).unwrap()
    }

    #[test]
    fn all_fail_is_full_rate() {
        let sets: Vec<_> = (0..10).map(|i| rs(&format!("t{i}"), &[(ItemId::CS5, Outcome::Fail)])).collect();
        let rows = failure_rates(&sets, Grouping::Item, Policy::And).unwrap();
        assert_eq!(rows, vec![RateRow { group: "CS5_Statistical_Significance".into(), fails: 10, passes: 0, rate: Some(1.0) }]);
    }

    #[test]
    fn na_only_category_is_undefined() {
        let sets: Vec<_> = (0..3)
            .map(|i| rs(&format!("h{i}"), &[(ItemId::TS1, Outcome::Na)]).with_category(Category::HumanRepo))
            .collect();
        let rows = failure_rates(&sets, Grouping::Category, Policy::Majority).unwrap();
        assert_eq!(rows[0].group, "human_repo/TS1_Goal_Match");
        assert_eq!(rows[0].rate, None);
    }

    #[test]
    fn single_pass_is_zero_and_dimensions_group() {
        let sets = vec![rs("a", &[(ItemId::CS1, Outcome::Pass), (ItemId::CS2, Outcome::Fail), (ItemId::C1, Outcome::Pass)])];
        let items = failure_rates(&sets, Grouping::Item, Policy::And).unwrap();
        assert_eq!(items[0].rate, Some(0.0));
        assert_eq!(items[0].group, "CS1_Results_vs_Conclusion");
        let dims = failure_rates(&sets, Grouping::Dimension, Policy::And).unwrap();
        assert_eq!(dims.len(), 2);
        assert_eq!(dims[0].group, "Coherence");
        assert_eq!(dims[0].rate, Some(0.5));
        assert!(failure_rates(&[], Grouping::Item, Policy::And).is_err());
    }
}
