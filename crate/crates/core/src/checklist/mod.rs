//! The fixed 23-item binary checklist, its applicability rules and the
//! verdict document format.

mod document;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bundle::{Category, ResearchBundle};

pub use document::{parse_verdicts, serialize_verdicts, DocumentError, Entry, VerdictDocument};
pub(crate) use document::{parse_item_key, parse_json, parse_outcome_map, parse_rationale_map};

/// Bumped whenever an item text, slug or applicability rule changes.
pub const CHECKLIST_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ItemId {
    CS1,
    CS2,
    CS3,
    CS4,
    CS5,
    TS1,
    TS2,
    TS3,
    TS4,
    C1,
    C2,
    C3,
    C4,
    RP1,
    RP2,
    RP3,
    RP4,
    DE1,
    DE2,
    DE3,
    GT1,
    GT2,
    GT3,
}

impl ItemId {
    pub const ALL: [ItemId; 23] = [
        ItemId::CS1,
        ItemId::CS2,
        ItemId::CS3,
        ItemId::CS4,
        ItemId::CS5,
        ItemId::TS1,
        ItemId::TS2,
        ItemId::TS3,
        ItemId::TS4,
        ItemId::C1,
        ItemId::C2,
        ItemId::C3,
        ItemId::C4,
        ItemId::RP1,
        ItemId::RP2,
        ItemId::RP3,
        ItemId::RP4,
        ItemId::DE1,
        ItemId::DE2,
        ItemId::DE3,
        ItemId::GT1,
        ItemId::GT2,
        ItemId::GT3,
    ];

    /// Short code such as `CS1`.
    pub fn code(self) -> &'static str {
        self.item().code
    }

    /// Document key such as `CS1_Results_vs_Conclusion`.
    pub fn key(self) -> &'static str {
        self.item().key
    }

    pub fn item(self) -> &'static ChecklistItem {
        &BUILTIN[self as usize]
    }

    pub fn dimension(self) -> Dimension {
        self.item().dimension
    }

    pub fn aspect(self) -> Aspect {
        self.item().aspect
    }

    pub fn from_key(key: &str) -> Option<ItemId> {
        BUILTIN.iter().find(|i| i.key == key).map(|i| i.id)
    }

    pub fn from_code(code: &str) -> Option<ItemId> {
        BUILTIN.iter().find(|i| i.code == code).map(|i| i.id)
    }

    /// Inclusive range in checklist order, e.g. `ItemId::range(C1, C4)`.
    pub fn range(first: ItemId, last: ItemId) -> impl Iterator<Item = ItemId> {
        ItemId::ALL
            .into_iter()
            .filter(move |id| *id >= first && *id <= last)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ItemId {
    type Err = String;

    /// Accepts either the short code or the full document key.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ItemId::from_code(s)
            .or_else(|| ItemId::from_key(s))
            .ok_or_else(|| format!("unknown checklist item `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Coherence,
    Reproducibility,
    Generalizability,
}

impl Dimension {
    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Coherence => "Coherence",
            Dimension::Reproducibility => "Reproducibility",
            Dimension::Generalizability => "Generalizability",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Aspect {
    Consistency,
    InstructionFollowing,
    ExecutionQuality,
    ReplicationQuality,
    FindingGeneralizability,
    MethodGeneralizability,
}

impl Aspect {
    pub fn as_str(self) -> &'static str {
        match self {
            Aspect::Consistency => "Consistency",
            Aspect::InstructionFollowing => "Instruction Following",
            Aspect::ExecutionQuality => "Execution Quality",
            Aspect::ReplicationQuality => "Replication Quality",
            Aspect::FindingGeneralizability => "Finding Generalizability",
            Aspect::MethodGeneralizability => "Method Generalizability",
        }
    }
}

/// When an item applies to a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Applicability {
    Always,
    /// Instruction following needs the human input prompt of agent tasks.
    AgentTasksOnly,
    RequiresDemo,
    RequiresNewMethod,
}

impl Applicability {
    pub fn applies(self, category: Category, has_demo: bool, proposes_new_method: bool) -> bool {
        match self {
            Applicability::Always => true,
            Applicability::AgentTasksOnly => category != Category::HumanRepo,
            Applicability::RequiresDemo => has_demo,
            Applicability::RequiresNewMethod => proposes_new_method,
        }
    }

    /// The rule text recorded in the rationale of an NA verdict.
    pub fn na_reason(self) -> &'static str {
        match self {
            Applicability::Always => "not applicable",
            Applicability::AgentTasksOnly => {
                "not applicable: instruction following is not evaluated for human-written repositories"
            }
            Applicability::RequiresDemo => "not applicable: evaluated only when a demo exists",
            Applicability::RequiresNewMethod => {
                "not applicable: evaluated only when the work proposes a new method"
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChecklistItem {
    pub id: ItemId,
    pub code: &'static str,
    pub key: &'static str,
    pub dimension: Dimension,
    pub aspect: Aspect,
    pub text: &'static str,
    pub applicability: Applicability,
}

macro_rules! item {
    ($id:ident, $key:literal, $dim:ident, $aspect:ident, $app:ident, $text:literal) => {
        ChecklistItem {
            id: ItemId::$id,
            code: stringify!($id),
            key: $key,
            dimension: Dimension::$dim,
            aspect: Aspect::$aspect,
            text: $text,
            applicability: Applicability::$app,
        }
    };
}

static BUILTIN: [ChecklistItem; 23] = [
    item!(CS1, "CS1_Results_vs_Conclusion", Coherence, Consistency, Always,
        "All evaluable conclusions in the documentation match the results originally recorded in the notebook."),
    item!(CS2, "CS2_Plan_vs_Implementation", Coherence, Consistency, Always,
        "A plan file exists, and all steps in the final version of the plan are reflected in the implementation."),
    item!(CS3, "CS3_Effect_Size", Coherence, Consistency, Always,
        "The reported effects have a clearly non-trivial magnitude (effect size) relative to baseline behavior or variability, such that the conclusions do not rely on marginal or negligible changes."),
    item!(CS4, "CS4_Justification", Coherence, Consistency, Always,
        "All key design choices and intermediate conclusions are explicitly justified, explaining why each design was chosen and how each conclusion is supported."),
    item!(CS5, "CS5_Statistical_Significance", Coherence, Consistency, Always,
        "Key experimental results supporting the main claims report appropriate measures of uncertainty or significance (e.g., error bars, confidence intervals, or statistical tests), with a clear explanation of what variability they capture."),
    item!(TS1, "TS1_Goal_Match", Coherence, InstructionFollowing, AgentTasksOnly,
        "The goal described in the plan file matches the input stated goal."),
    // Same text as TS1 in the source table; kept verbatim.
    item!(TS2, "TS2_Goal_Match_Dup", Coherence, InstructionFollowing, AgentTasksOnly,
        "The goal described in the plan file matches the input stated goal."),
    item!(TS3, "TS3_Methodology_Direction", Coherence, InstructionFollowing, AgentTasksOnly,
        "The plan file\u{2019}s methodology follows the input intended direction and covers the required analyses."),
    item!(TS4, "TS4_Component_Function", Coherence, InstructionFollowing, AgentTasksOnly,
        "For every circuit component identified, the tests confirm that its behavior matches the hypothesized function described in the given plan."),
    item!(C1, "C1_Runnable", Reproducibility, ExecutionQuality, Always,
        "The block executes without error."),
    item!(C2, "C2_Correct_Logic", Reproducibility, ExecutionQuality, Always,
        "The logic implements the described computation correctly (indexing, metric formulas, patching logic, dataset handling)."),
    item!(C3, "C3_Redundancy", Reproducibility, ExecutionQuality, Always,
        "The block duplicates another block\u{2019}s computation without adding new information. (Revising previous wrong results does not considered as redundant.)"),
    item!(C4, "C4_Goal_Contribution", Reproducibility, ExecutionQuality, Always,
        "The block does not contribute to achieving the project goal as defined in the lan, code walkthrough, or documentation."),
    item!(RP1, "RP1_Reconstructible", Reproducibility, ReplicationQuality, Always,
        "The experiment can be reconstructed from the plan and code-walk without missing steps or required inference beyond ambiguous interpretation."),
    item!(RP2, "RP2_Environment", Reproducibility, ReplicationQuality, Always,
        "The environment (packages, models, data) can be restored and run without unresolved version or dependency issues."),
    item!(RP3, "RP3_Stable", Reproducibility, ReplicationQuality, Always,
        "Replicated results are stable across multiple runs."),
    item!(RP4, "RP4_Demo", Reproducibility, ReplicationQuality, RequiresDemo,
        "pass when all of the following conditions are satisfied: (1) The demo can be executed or followed without referencing hidden or external materials. (2) Experiment or result claimed in the original paper / plan is can be demonstrated in the demo."),
    item!(DE1, "DE1_Result_Fidelity", Reproducibility, ReplicationQuality, Always,
        "Replicated documentation reports results (metrics, trends, qualitative findings) that match the original documentation within acceptable tolerance (within 5% deviation)."),
    item!(DE2, "DE2_Conclusion_Consistency", Reproducibility, ReplicationQuality, Always,
        "The replicated documentation presents conclusions and interpretations consistent with the original."),
    item!(DE3, "DE3_No_New_Information", Reproducibility, ReplicationQuality, Always,
        "No new information appears that is absent from or unsupported by the original documentation."),
    item!(GT1, "GT1_New_Model", Generalizability, FindingGeneralizability, Always,
        "The newly-proposed concept is predictable on a new model, and can be verified through at least one example."),
    item!(GT2, "GT2_New_Data", Generalizability, FindingGeneralizability, Always,
        "The newly-proposed concept is predictable on a new data instance, and can be verified through at least one example."),
    item!(GT3, "GT3_New_Task", Generalizability, MethodGeneralizability, RequiresNewMethod,
        "If the work propose a new method, the method can be applied to another similar task, and can be verified through at lease one example."),
];

/// The 23 items in checklist order (CS, TS, C, RP, DE, GT).
pub fn builtin_checklist() -> &'static [ChecklistItem] {
    &BUILTIN
}

pub fn resolve_applicability(item: &ChecklistItem, bundle: &ResearchBundle) -> bool {
    item.applicability
        .applies(bundle.category, bundle.has_demo, bundle.proposes_new_method)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
    #[serde(rename = "NA")]
    Na,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Pass => "PASS",
            Outcome::Fail => "FAIL",
            Outcome::Na => "NA",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "PASS" => Ok(Outcome::Pass),
            "FAIL" => Ok(Outcome::Fail),
            "NA" => Ok(Outcome::Na),
            other => Err(format!("invalid outcome `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub item_id: ItemId,
    pub outcome: Outcome,
    pub rationale: String,
    pub run_id: u32,
}

impl Verdict {
    pub fn pass(item_id: ItemId, rationale: impl Into<String>, run_id: u32) -> Self {
        Verdict { item_id, outcome: Outcome::Pass, rationale: rationale.into(), run_id }
    }

    pub fn fail(item_id: ItemId, rationale: impl Into<String>, run_id: u32) -> Self {
        Verdict { item_id, outcome: Outcome::Fail, rationale: rationale.into(), run_id }
    }

    /// NA verdict whose rationale names the applicability rule that fired.
    pub fn not_applicable(item_id: ItemId, run_id: u32) -> Self {
        Verdict {
            item_id,
            outcome: Outcome::Na,
            rationale: item_id.item().applicability.na_reason().to_string(),
            run_id,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_three_items_in_order() {
        let items = builtin_checklist();
        assert_eq!(items.len(), 23);
        for (pos, item) in items.iter().enumerate() {
            assert_eq!(item.id as usize, pos);
            assert_eq!(item.id, ItemId::ALL[pos]);
            assert!(item.key.starts_with(&format!("{}_", item.code)));
        }
        assert_eq!(items[0].id, ItemId::CS1);
        assert_eq!(
            items[0].text,
            "All evaluable conclusions in the documentation match the results originally recorded in the notebook."
        );
    }

    #[test]
    fn ids_unique() {
        let mut keys: Vec<_> = builtin_checklist().iter().map(|i| i.key).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 23);
    }

    #[test]
    fn families_map_to_aspects() {
        for item in builtin_checklist() {
            let expected = match &item.code[..item.code.len() - 1] {
                "CS" => Aspect::Consistency,
                "TS" => Aspect::InstructionFollowing,
                "C" => Aspect::ExecutionQuality,
                "RP" | "DE" => Aspect::ReplicationQuality,
                "GT" if item.id == ItemId::GT3 => Aspect::MethodGeneralizability,
                "GT" => Aspect::FindingGeneralizability,
                other => panic!("unexpected family {other}"),
            };
            assert_eq!(item.aspect, expected, "{}", item.code);
        }
    }

    #[test]
    fn c1_text() {
        assert_eq!(ItemId::C1.item().text, "The block executes without error.");
        assert_eq!(ItemId::C1.key(), "C1_Runnable");
    }

    #[test]
    fn parse_id_from_code_or_key() {
        assert_eq!("RP3".parse::<ItemId>().unwrap(), ItemId::RP3);
        assert_eq!("DE1_Result_Fidelity".parse::<ItemId>().unwrap(), ItemId::DE1);
        assert!("XX9".parse::<ItemId>().is_err());
    }

    #[test]
    fn range_inclusive() {
        let ids: Vec<_> = ItemId::range(ItemId::C1, ItemId::C4).collect();
        assert_eq!(ids, vec![ItemId::C1, ItemId::C2, ItemId::C3, ItemId::C4]);
    }

    #[test]
    fn applicability_exhaustive() {
        for item in builtin_checklist() {
            for category in [Category::Replication, Category::OpenEnded, Category::HumanRepo] {
                for has_demo in [false, true] {
                    for new_method in [false, true] {
                        let got = item.applicability.applies(category, has_demo, new_method);
                        let code = item.code;
                        let expected = if code.starts_with("TS") {
                            category != Category::HumanRepo
                        } else if code == "RP4" {
                            has_demo
                        } else if code == "GT3" {
                            new_method
                        } else {
                            true
                        };
                        assert_eq!(got, expected, "{code} {category:?} {has_demo} {new_method}");
                    }
                }
            }
        }
    }

    #[test]
    fn na_rationale_names_rule() {
        let v = Verdict::not_applicable(ItemId::RP4, 1);
        assert_eq!(v.outcome, Outcome::Na);
        assert!(v.rationale.contains("demo"));
    }
}
