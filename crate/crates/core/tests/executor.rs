mod common;

use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::time::Duration;

use common::*;
use execeval_core::checklist::Outcome;
use execeval_core::executor::{
    c1_verdicts, run_units, ErrorClass, ErrorPolicy, ExecError, ExecLimits, Phase, SessionMode,
    ShimRunner, UnitManifest, UnitOutcome, SKIPPED_RATIONALE, TIMEOUT_RATIONALE,
};
use execeval_core::sandbox::{create_workspace, Workspace};
use tempfile::TempDir;

fn workspace(tmp: &TempDir, sources: &[&str]) -> (Workspace, Vec<execeval_core::bundle::CodeUnit>) {
    let b = materialize(&sh_bundle("exec", sources), &tmp.path().join("src"));
    let ws = create_workspace(&b, "r1", &tmp.path().join("ws")).unwrap();
    (ws, b.code_units)
}

fn limits(timeout_ms: u64, policy: ErrorPolicy) -> ExecLimits {
    ExecLimits { per_unit_timeout: Duration::from_millis(timeout_ms), policy }
}

fn assert_event_invariants(t: &execeval_core::executor::ExecutionTranscript) {
    for u in &t.units {
        if u.outcome == UnitOutcome::Skipped {
            assert!(t.events.iter().all(|e| e.unit_index != u.index));
            continue;
        }
        let phases: Vec<_> = t.events.iter().filter(|e| e.unit_index == u.index).map(|e| e.phase).collect();
        assert_eq!(phases.first(), Some(&Phase::Start), "{phases:?}");
        assert_eq!(phases.last(), Some(&Phase::End), "{phases:?}");
        assert_eq!(phases.iter().filter(|p| **p == Phase::Start).count(), 1);
        assert_eq!(phases.iter().filter(|p| **p == Phase::End).count(), 1);
        assert!(phases.iter().filter(|p| **p == Phase::Error).count() <= 1);
    }
    assert!(t.events.windows(2).all(|w| w[0].wall_time_ms <= w[1].wall_time_ms));
}

#[test]
fn print_only_units_succeed() {
    let tmp = TempDir::new().unwrap();
    let (ws, units) = workspace(&tmp, &["echo one", "echo two"]);
    let t = run_units(&ws, &units, &ExecLimits::default(), &sh_runner()).unwrap();
    assert_eq!(t.outcomes(), vec![&UnitOutcome::Succeeded, &UnitOutcome::Succeeded]);
    assert_eq!(t.units[0].stdout, "one\n");
    assert_eq!(t.units[1].stdout, "two\n");
    assert_event_invariants(&t);
    let c1 = c1_verdicts(&t, 1);
    assert!(c1.values().all(|v| v.outcome == Outcome::Pass));
}

#[test]
fn continue_on_error_runs_later_units() {
    let tmp = TempDir::new().unwrap();
    let (ws, units) = workspace(&tmp, &["echo 'ValueError: bad input' >&2; exit 1", "echo after"]);
    let t = run_units(&ws, &units, &ExecLimits::default(), &sh_runner()).unwrap();
    match &t.units[0].outcome {
        UnitOutcome::Failed { error_class, traceback } => {
            assert_eq!(*error_class, ErrorClass::Other);
            assert!(traceback.contains("ValueError: bad input"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(t.units[1].outcome, UnitOutcome::Succeeded);
    assert_eq!(t.units[1].stdout, "after\n");
    assert_event_invariants(&t);
    let c1 = c1_verdicts(&t, 1);
    assert_eq!(c1[&0].outcome, Outcome::Fail);
    assert!(c1[&0].rationale.contains("ValueError: bad input"));
    assert_eq!(c1[&1].outcome, Outcome::Pass);
}

#[test]
fn abort_on_error_skips_the_rest() {
    let tmp = TempDir::new().unwrap();
    let (ws, units) = workspace(&tmp, &["exit 3", "echo never", "echo never"]);
    let runner = CountingRunner::new(sh_runner());
    let t = run_units(&ws, &units, &limits(10_000, ErrorPolicy::AbortOnError), &runner).unwrap();
    assert!(matches!(t.units[0].outcome, UnitOutcome::Failed { .. }));
    assert_eq!(t.units[1].outcome, UnitOutcome::Skipped);
    assert_eq!(t.units[2].outcome, UnitOutcome::Skipped);
    assert_eq!(runner.count(), 1);
    assert_event_invariants(&t);
    let c1 = c1_verdicts(&t, 4);
    assert_eq!(c1[&1].rationale, SKIPPED_RATIONALE);
    assert_eq!(c1[&1].run_id, 4);
}

#[test]
fn empty_unit_list_launches_nothing() {
    let tmp = TempDir::new().unwrap();
    let (ws, _) = workspace(&tmp, &["echo x"]);
    let runner = CountingRunner::new(sh_runner());
    let t = run_units(&ws, &[], &ExecLimits::default(), &runner).unwrap();
    assert!(t.units.is_empty());
    assert!(t.events.is_empty());
    assert_eq!(runner.count(), 0);
    assert!(c1_verdicts(&t, 1).is_empty());
}

#[test]
fn timeout_kills_unit_and_relaunches_for_the_rest() {
    let tmp = TempDir::new().unwrap();
    let (ws, units) = workspace(&tmp, &["sleep 20", "echo survived"]);
    let runner = CountingRunner::new(sh_runner());
    let started = std::time::Instant::now();
    let t = run_units(&ws, &units, &limits(300, ErrorPolicy::ContinueOnError), &runner).unwrap();
    assert!(started.elapsed() < Duration::from_secs(10));
    assert_eq!(t.units[0].outcome, UnitOutcome::TimedOut);
    assert_eq!(t.units[1].outcome, UnitOutcome::Succeeded);
    assert_eq!(runner.count(), 2);
    assert_event_invariants(&t);
    assert_eq!(c1_verdicts(&t, 1)[&0].rationale, TIMEOUT_RATIONALE);
}

#[test]
fn timeout_under_abort_skips_the_rest() {
    let tmp = TempDir::new().unwrap();
    let (ws, units) = workspace(&tmp, &["sleep 20", "echo x"]);
    let t = run_units(&ws, &units, &limits(200, ErrorPolicy::AbortOnError), &sh_runner()).unwrap();
    assert_eq!(t.outcomes(), vec![&UnitOutcome::TimedOut, &UnitOutcome::Skipped]);
}

#[test]
fn missing_command_is_an_environment_error() {
    let tmp = TempDir::new().unwrap();
    let (ws, units) = workspace(&tmp, &["definitely_not_a_command_xyz"]);
    let t = run_units(&ws, &units, &ExecLimits::default(), &sh_runner()).unwrap();
    match &t.units[0].outcome {
        UnitOutcome::Failed { error_class, .. } => assert_eq!(*error_class, ErrorClass::EnvironmentOrDependency),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn units_run_in_the_workspace_and_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (ws, units) = workspace(&tmp, &["cat plan.md | head -c 5", "echo 42 > \"$EXECEVAL_OUTPUT_DIR/x\"; cat output/x"]);
    let a = run_units(&ws, &units, &ExecLimits::default(), &sh_runner()).unwrap();
    let b = run_units(&ws, &units, &ExecLimits::default(), &sh_runner()).unwrap();
    assert_eq!(a.units[0].stdout, "Goal:");
    assert_eq!(a.units[1].stdout, "42\n");
    assert_eq!(a.outcomes(), b.outcomes());
    let strip = |t: &execeval_core::executor::ExecutionTranscript| {
        t.events.iter().map(|e| (e.unit_index, e.phase, e.payload.clone())).collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn interpreter_missing_fails_units_without_crashing() {
    let tmp = TempDir::new().unwrap();
    let (ws, units) = workspace(&tmp, &["echo x"]);
    let runner = execeval_core::executor::SubprocessRunner::new(vec!["no-such-interpreter-xyz".into()]);
    let t = run_units(&ws, &units, &ExecLimits::default(), &runner).unwrap();
    match &t.units[0].outcome {
        UnitOutcome::Failed { error_class, .. } => assert_eq!(*error_class, ErrorClass::EnvironmentOrDependency),
        other => panic!("unexpected {other:?}"),
    }
}

// A stand-in shim written in sh; it replays a fixed event script.
fn fake_shim(dir: &Path, body: &str) -> ShimRunner {
    let path = dir.join("fake-shim");
    let script = format!(
        "#!/bin/sh\n[ \"$1\" = \"--manifest\" ] || exit 9\n[ -f \"$2\" ] || exit 8\ncp \"$2\" \"$EXECEVAL_OUTPUT_DIR/seen-manifest.json\"\n{body}\n"
    );
    fs::write(&path, script).unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    ShimRunner::new(vec![path.display().to_string()], SessionMode::SharedSession)
}

fn ev(unit: usize, phase: &str, payload: &str) -> String {
    format!("echo '{{\"unit\":{unit},\"phase\":\"{phase}\",\"payload\":\"{payload}\",\"t_ms\":0}}'")
}

#[test]
fn shim_stream_is_folded_into_outcomes() {
    let tmp = TempDir::new().unwrap();
    let (ws, units) = workspace(&tmp, &["x=1", "echo $x", "boom"]);
    let body = [
        ev(0, "start", ""), ev(0, "end", ""),
        ev(1, "start", ""), ev(1, "stdout", "1\\\\n"), ev(1, "end", ""),
        ev(2, "start", ""), ev(2, "error", "Traceback\\\\nValueError: boom"), ev(2, "end", ""),
    ]
    .join("\n");
    let shim = fake_shim(tmp.path(), &body);
    let t = run_units(&ws, &units, &ExecLimits::default(), &shim).unwrap();
    assert_eq!(t.units[0].outcome, UnitOutcome::Succeeded);
    assert_eq!(t.units[1].outcome, UnitOutcome::Succeeded);
    assert_eq!(t.units[1].stdout, "1\n");
    assert!(matches!(t.units[2].outcome, UnitOutcome::Failed { .. }));
    assert_event_invariants(&t);

    let manifest: UnitManifest =
        serde_json::from_str(&fs::read_to_string(ws.output_dir.join("seen-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.units.len(), 3);
    assert_eq!(manifest.session_mode, SessionMode::SharedSession);
    assert_eq!(manifest.limits.per_unit_timeout_secs, 600);
    assert_eq!(fs::read_to_string(&manifest.units[1].source_path).unwrap(), "echo $x");
    assert_eq!(manifest.workspace_root, ws.root);

    let jsonl = t.transcript_jsonl();
    assert_eq!(jsonl.lines().count(), t.events.len());
    for line in jsonl.lines() {
        execeval_core::executor::WireEvent::parse_line(line).unwrap();
    }
}

#[test]
fn shim_exit_without_end_is_a_crash() {
    let tmp = TempDir::new().unwrap();
    let (ws, units) = workspace(&tmp, &["a", "b", "c"]);
    let body = [ev(0, "start", ""), ev(0, "end", ""), ev(1, "start", ""), "exit 0".to_string()].join("\n");
    let err = run_units(&ws, &units, &ExecLimits::default(), &fake_shim(tmp.path(), &body)).unwrap_err();
    let ExecError::RunnerCrashed { transcript, .. } = err else { panic!("expected crash, got {err}") };
    assert_eq!(transcript.units.len(), 3);
    assert_eq!(transcript.units[0].outcome, UnitOutcome::Succeeded);
    for u in &transcript.units[1..] {
        assert!(matches!(u.outcome, UnitOutcome::Failed { error_class: ErrorClass::Other, .. }));
    }
}

#[test]
fn fatal_event_is_a_crash() {
    let tmp = TempDir::new().unwrap();
    let (ws, units) = workspace(&tmp, &["a"]);
    let body = "echo '{\"unit\":null,\"phase\":\"fatal\",\"payload\":\"bad manifest\",\"t_ms\":0}'; exit 2";
    let err = run_units(&ws, &units, &ExecLimits::default(), &fake_shim(tmp.path(), body)).unwrap_err();
    assert!(err.to_string().contains("bad manifest"), "{err}");
    assert_eq!(err.transcript().unwrap().units.len(), 1);
}

#[test]
fn malformed_stream_is_a_protocol_violation() {
    let tmp = TempDir::new().unwrap();
    let (ws, units) = workspace(&tmp, &["a"]);
    for body in [
        "echo 'not json'".to_string(),
        ev(0, "stdout", "x"),
        [ev(0, "start", ""), ev(0, "start", "")].join("\n"),
        [ev(0, "start", ""), ev(0, "error", "a"), ev(0, "error", "b")].join("\n"),
        [ev(1, "start", "")].join("\n"),
        "echo '{\"unit\":0,\"phase\":\"start\",\"payload\":\"\",\"t_ms\":0,\"extra\":1}'".to_string(),
    ] {
        let err = run_units(&ws, &units, &ExecLimits::default(), &fake_shim(tmp.path(), &body)).unwrap_err();
        assert!(matches!(err, ExecError::ProtocolViolation(_)), "{body}: {err}");
    }
}

#[test]
fn missing_shim_is_a_launch_error() {
    let tmp = TempDir::new().unwrap();
    let (ws, units) = workspace(&tmp, &["a"]);
    let shim = ShimRunner::new(vec!["/nonexistent/runner".into()], SessionMode::SharedSession);
    assert!(matches!(run_units(&ws, &units, &ExecLimits::default(), &shim), Err(ExecError::Launch(_))));
}
