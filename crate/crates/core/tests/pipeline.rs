mod common;

use std::collections::BTreeSet;
use std::fs;
use std::sync::Arc;

use common::*;
use execeval_core::analytics::{AnalyticsError, Policy};
use execeval_core::bundle::Category;
use execeval_core::checklist::{parse_verdicts, ItemId, Outcome};
use execeval_core::config::RunMode;
use execeval_core::pipeline::{
    aggregate_task, agree, load_run_set, mode_items, read_run_record, PipelineError,
};
use execeval_core::ResearchBundle;
use serde_json::json;

fn bundle_in(dir: &std::path::Path, b: ResearchBundle) -> Arc<ResearchBundle> {
    Arc::new(materialize(&b, &dir.join("bundles")))
}

fn codes(doc: &execeval_core::VerdictDocument) -> BTreeSet<ItemId> {
    doc.item_ids()
}

#[test]
fn full_mode_repeats_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle_in(dir.path(), fixture_bundle("fixture"));
    let cfg = test_config(dir.path(), RunMode::Full);
    let e = engine(cfg, judge_from(&pass_table()), Arc::new(sh_runner()));
    let summary = e.run(&[b]).unwrap();
    assert!(!summary.has_errors(), "{:?}", summary.tasks[0].errors);
    let runs = &summary.tasks[0].runs;
    assert_eq!(runs.len(), 3);
    let texts: Vec<_> = runs.iter().map(|p| fs::read(p).unwrap()).collect();
    assert!(texts.windows(2).all(|w| w[0] == w[1]));

    let doc = parse_verdicts(std::str::from_utf8(&texts[0]).unwrap()).unwrap();
    assert_eq!(codes(&doc), mode_items(RunMode::Full));
    assert_eq!(doc.outcome(ItemId::C1), Some(Outcome::Pass));
    assert_eq!(doc.outcome(ItemId::DE1), Some(Outcome::Pass), "{}", doc.entries[&ItemId::DE1].rationale);
    assert_eq!(doc.outcome(ItemId::RP3), Some(Outcome::Pass));
    assert_eq!(doc.outcome(ItemId::RP4), Some(Outcome::Na));
    assert_eq!(doc.outcome(ItemId::GT3), Some(Outcome::Na));
    assert_eq!(doc.outcome(ItemId::GT1), Some(Outcome::Pass));

    let task_dir = &summary.tasks[0].dir;
    for policy in [Policy::And, Policy::Majority] {
        let agg = aggregate_task(task_dir, policy).unwrap();
        assert_eq!(agg.document.as_bytes(), &texts[0][..]);
    }
    let record = read_run_record(task_dir).unwrap();
    assert_eq!(record.checklist_version, execeval_core::checklist::CHECKLIST_VERSION);
    assert!(record.backend_identity.starts_with("scripted:"));
    assert_eq!(record.template_digests.len(), 10);
    let run1 = task_dir.join("run_1");
    for f in ["transcript.jsonl", "blocks.json", "gt_trials.json", "run_info.json", "replication/replication_1.json"] {
        assert!(run1.join(f).is_file(), "{f}");
    }
    // Workspaces are torn down.
    assert_eq!(fs::read_dir(dir.path().join("ws")).unwrap().count(), 0);
}

#[test]
fn parallel_jobs_match_sequential() {
    let dir = tempfile::tempdir().unwrap();
    let bundles: Vec<_> = ["a", "b"].iter().map(|t| bundle_in(dir.path(), fixture_bundle(t))).collect();
    let mut outputs = Vec::new();
    for jobs in [1, 4] {
        let mut cfg = test_config(dir.path(), RunMode::Full);
        cfg.jobs = jobs;
        cfg.out = dir.path().join(format!("out{jobs}"));
        let e = engine(cfg, judge_from(&pass_table()), Arc::new(sh_runner()));
        let s = e.run(&bundles).unwrap();
        let texts: Vec<Vec<u8>> = s.tasks.iter().flat_map(|t| t.runs.iter().map(|p| fs::read(p).unwrap())).collect();
        outputs.push(texts);
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0].len(), 6);
}

#[test]
fn static_modes_are_scoped_and_never_execute() {
    for mode in [RunMode::DocOnly, RunMode::NoExecution] {
        let dir = tempfile::tempdir().unwrap();
        let b = bundle_in(dir.path(), fixture_bundle("fixture"));
        let runner = Arc::new(CountingRunner::new(sh_runner()));
        let counter = runner.clone();
        let e = engine(test_config(dir.path(), mode), judge_from(&pass_table()), runner);
        let s = e.run(&[b]).unwrap();
        for p in &s.tasks[0].runs {
            let doc = parse_verdicts(&fs::read_to_string(p).unwrap()).unwrap();
            assert_eq!(codes(&doc), mode_items(mode));
            assert!(!doc.entries.keys().any(|id| id.code().starts_with("TS")));
        }
        assert_eq!(counter.count(), 0, "{mode:?}");
        assert!(!dir.path().join("ws").exists(), "{mode:?} created a workspace");
    }
}

#[test]
fn human_repo_marks_instruction_items_na() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = fixture_bundle("human");
    b.category = Category::HumanRepo;
    b.prompt = None;
    let b = bundle_in(dir.path(), b);
    let mut cfg = test_config(dir.path(), RunMode::Full);
    cfg.repeats = 1;
    let e = engine(cfg, judge_from(&pass_table()), Arc::new(sh_runner()));
    let s = e.run(&[b]).unwrap();
    let doc = parse_verdicts(&fs::read_to_string(&s.tasks[0].runs[0]).unwrap()).unwrap();
    for id in ItemId::range(ItemId::TS1, ItemId::TS4) {
        assert_eq!(doc.outcome(id), Some(Outcome::Na));
    }
    let rs = load_run_set(&s.tasks[0].dir).unwrap();
    assert_eq!(rs.category, Some(Category::HumanRepo));
}

#[test]
fn unparseable_judge_fails_closed() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle_in(dir.path(), fixture_bundle("fixture"));
    let mut cfg = test_config(dir.path(), RunMode::Full);
    cfg.repeats = 1;
    let table = json!({"*": "I think it is probably fine"});
    let e = engine(cfg, judge_from(&table), Arc::new(sh_runner()));
    let s = e.run(&[b]).unwrap();
    let doc = parse_verdicts(&fs::read_to_string(&s.tasks[0].runs[0]).unwrap()).unwrap();
    assert_eq!(codes(&doc), mode_items(RunMode::Full));
    let deterministic = [ItemId::C1, ItemId::DE1, ItemId::RP3];
    for (id, entry) in &doc.entries {
        if deterministic.contains(id) || entry.outcome == Outcome::Na {
            continue;
        }
        assert_eq!(entry.outcome, Outcome::Fail, "{id}: {}", entry.rationale);
    }
    assert!(doc.entries[&ItemId::CS1].rationale.starts_with("judge protocol failure"));
    // C2-C4 fail through the per-block AND.
    assert!(doc.entries[&ItemId::C2].rationale.contains("block 0: judge protocol failure"));
}

#[test]
fn scripted_failures_land_in_the_document() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle_in(dir.path(), fixture_bundle("ioi"));
    let mut table = pass_table();
    table["ioi/CS1"] = json!(
        r#"{"verdict":"FAIL","rationale":"The report claims strong support, but verification shows negative performance (-4.2%)."}"#
    );
    table["C3/block/1"] = json!(r#"{"verdict":"FAIL","rationale":"duplicates block 0 without new information"}"#);
    let mut cfg = test_config(dir.path(), RunMode::Full);
    cfg.repeats = 1;
    let e = engine(cfg, judge_from(&table), Arc::new(sh_runner()));
    let s = e.run(&[b]).unwrap();
    let doc = parse_verdicts(&fs::read_to_string(&s.tasks[0].runs[0]).unwrap()).unwrap();
    assert_eq!(doc.outcome(ItemId::CS1), Some(Outcome::Fail));
    assert!(doc.entries[&ItemId::CS1].rationale.contains("-4.2%"));
    assert_eq!(doc.outcome(ItemId::C3), Some(Outcome::Fail));
    assert_eq!(doc.entries[&ItemId::C3].rationale, "block 1: duplicates block 0 without new information");
    assert_eq!(doc.outcome(ItemId::C2), Some(Outcome::Pass));
}

#[test]
fn code_that_reads_the_report_fails_replication() {
    let dir = tempfile::tempdir().unwrap();
    let b = sh_bundle("peek", &["grep -o 'is [0-9.]*' report.md | sed 's/is /METRIC accuracy=/'"]);
    let b = bundle_in(dir.path(), b);
    let mut cfg = test_config(dir.path(), RunMode::Full);
    cfg.repeats = 1;
    let e = engine(cfg, judge_from(&pass_table()), Arc::new(sh_runner()));
    let s = e.run(&[b]).unwrap();
    let doc = parse_verdicts(&fs::read_to_string(&s.tasks[0].runs[0]).unwrap()).unwrap();
    // The original execution sees the report and runs cleanly.
    assert_eq!(doc.outcome(ItemId::C1), Some(Outcome::Pass));
    // The replication workspace has no report, so nothing is replicated.
    assert_eq!(doc.outcome(ItemId::DE1), Some(Outcome::Fail));
    assert_eq!(doc.entries[&ItemId::DE1].rationale, "no comparable metrics");
    let rec = fs::read_to_string(s.tasks[0].dir.join("run_1/replication/replication_1.json")).unwrap();
    assert!(rec.contains("report.md"), "{rec}");
}

#[test]
fn seeded_randomness_is_stable_and_unseeded_is_not() {
    let dir = tempfile::tempdir().unwrap();
    let seeded = "awk 'BEGIN { srand(42); for (i = 0; i < 5; i++) printf \"METRIC m%d=%f\\n\", i, rand() }'";
    let unseeded = "for i in 0 1 2 3 4; do echo \"METRIC m$i=$(od -An -N4 -tu4 /dev/urandom | tr -d ' ')\"; done";
    let mut outcomes = Vec::new();
    for (task, src) in [("seeded", seeded), ("unseeded", unseeded)] {
        let b = sh_bundle(task, &[src]);
        let b = bundle_in(dir.path(), b);
        let mut cfg = test_config(dir.path(), RunMode::Full);
        cfg.repeats = 1;
        let e = engine(cfg, judge_from(&pass_table()), Arc::new(sh_runner()));
        let s = e.run(&[b]).unwrap();
        let doc = parse_verdicts(&fs::read_to_string(&s.tasks[0].runs[0]).unwrap()).unwrap();
        outcomes.push((doc.outcome(ItemId::RP3), doc.entries[&ItemId::RP3].rationale.clone()));
    }
    assert_eq!(outcomes[0].0, Some(Outcome::Pass), "{}", outcomes[0].1);
    assert_eq!(outcomes[1].0, Some(Outcome::Fail), "{}", outcomes[1].1);
}

#[test]
fn aggregate_requires_every_run_file() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle_in(dir.path(), fixture_bundle("fixture"));
    let e = engine(test_config(dir.path(), RunMode::DocOnly), judge_from(&pass_table()), Arc::new(sh_runner()));
    let s = e.run(&[b]).unwrap();
    let task_dir = &s.tasks[0].dir;
    fs::remove_file(task_dir.join("run_2/verdicts.json")).unwrap();
    let err = aggregate_task(task_dir, Policy::And).unwrap_err();
    assert!(matches!(err, PipelineError::Analytics(AnalyticsError::KeyMismatch(_))), "{err}");
    assert!(err.is_user_error());
}

#[test]
fn majority_over_written_runs() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle_in(dir.path(), fixture_bundle("fixture"));
    let e = engine(test_config(dir.path(), RunMode::DocOnly), judge_from(&pass_table()), Arc::new(sh_runner()));
    let s = e.run(&[b]).unwrap();
    let task_dir = &s.tasks[0].dir;
    // Flip CS1 to FAIL in runs 2 and 3.
    for k in [2, 3] {
        let p = task_dir.join(format!("run_{k}/verdicts.json"));
        let text = fs::read_to_string(&p).unwrap();
        let flipped = text.replacen(r#""CS1_Results_vs_Conclusion": "PASS""#, r#""CS1_Results_vs_Conclusion": "FAIL""#, 1);
        fs::write(&p, flipped).unwrap();
    }
    let maj = aggregate_task(task_dir, Policy::Majority).unwrap();
    let doc = parse_verdicts(&maj.document).unwrap();
    assert_eq!(doc.outcome(ItemId::CS1), Some(Outcome::Fail));
    assert_eq!(doc.outcome(ItemId::CS2), Some(Outcome::Pass));
    let stab = &maj.stability.items[&ItemId::CS1];
    assert_eq!(stab.class, execeval_core::analytics::StabilityClass::OneDissent);
    assert!(task_dir.join("aggregate_majority.json").is_file());
    assert!(task_dir.join("stability.csv").is_file());
}

#[test]
fn agree_over_files() {
    let agent = r#"{"task_id":"t","run_id":1,
        "Checklist":{"CS1_Results_vs_Conclusion":"FAIL","CS2_Plan_vs_Implementation":"PASS"},
        "Rationale":{"CS1_Results_vs_Conclusion":"overclaims","CS2_Plan_vs_Implementation":"ok"}}"#;
    let human = r#"{"task_id":"t",
        "Checklist":{"CS1_Results_vs_Conclusion":"FAIL","CS2_Plan_vs_Implementation":"PASS"},
        "issues":[{"item_id":"CS1_Results_vs_Conclusion","description":"claims too much","link_id":"t/CS1_Results_vs_Conclusion"},
                  {"item_id":"CS2_Plan_vs_Implementation","description":"minor"}],
        "rated_quality":{"CS1_Results_vs_Conclusion":5}}"#;
    let out = agree(agent, human, None).unwrap();
    assert_eq!(out.agreement.overall.percent, Some(100.0));
    assert_eq!((out.venn.both, out.venn.agent_only, out.venn.human_only), (1, 0, 1));
    assert_eq!(out.rated_quality["CS1_Results_vs_Conclusion"], 5.0);
    let zero = human.replace(":5}", ":0}");
    let err = agree(agent, &zero, None).unwrap_err();
    assert!(matches!(err, PipelineError::Analytics(AnalyticsError::OutOfRange { value: 0, .. })));
}
