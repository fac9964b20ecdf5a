//! Sequential execution of code units inside a workspace.
//!
//! The executor never runs code itself. It launches a [`Runner`] session,
//! validates the event stream, enforces the per-unit timeout and error
//! policy, and folds events into an [`ExecutionTranscript`].

mod classify;
mod protocol;
mod runner;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classify::{classify_error, ErrorClass};
pub use protocol::{
    ErrorPolicy, EventParseError, LimitsEcho, ManifestUnit, Phase, SessionMode, UnitManifest, WireEvent,
};
pub use runner::{which, Runner, RunnerSession, SessionEvent, ShimRunner, SubprocessRunner, SCRATCH_DIR};

use crate::bundle::CodeUnit;
use crate::checklist::{ItemId, Verdict};
use crate::sandbox::Workspace;

pub const DEFAULT_UNIT_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecLimits {
    pub per_unit_timeout: Duration,
    pub policy: ErrorPolicy,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits { per_unit_timeout: DEFAULT_UNIT_TIMEOUT, policy: ErrorPolicy::ContinueOnError }
    }
}

/// An event as recorded by the executor. `wall_time_ms` is measured by the
/// executor from the start of `run_units`, not taken from the runner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionEvent {
    pub unit_index: usize,
    pub phase: Phase,
    pub payload: String,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum UnitOutcome {
    Succeeded,
    Failed { error_class: ErrorClass, traceback: String },
    Skipped,
    TimedOut,
}

impl UnitOutcome {
    pub fn succeeded(&self) -> bool {
        matches!(self, UnitOutcome::Succeeded)
    }

    pub fn label(&self) -> &'static str {
        match self {
            UnitOutcome::Succeeded => "succeeded",
            UnitOutcome::Failed { .. } => "failed",
            UnitOutcome::Skipped => "skipped",
            UnitOutcome::TimedOut => "timed_out",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub index: usize,
    pub outcome: UnitOutcome,
    pub stdout: String,
    pub stderr: String,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTranscript {
    pub units: Vec<UnitRecord>,
    pub events: Vec<ExecutionEvent>,
    pub total_wall_time_ms: u64,
}

impl ExecutionTranscript {
    pub fn unit(&self, index: usize) -> Option<&UnitRecord> {
        self.units.iter().find(|u| u.index == index)
    }

    pub fn outcomes(&self) -> Vec<&UnitOutcome> {
        self.units.iter().map(|u| &u.outcome).collect()
    }

    pub fn all_succeeded(&self) -> bool {
        self.units.iter().all(|u| u.outcome.succeeded())
    }

    /// All captured stdout, in unit order.
    pub fn stdout(&self) -> String {
        self.units.iter().map(|u| u.stdout.as_str()).collect()
    }

    /// Events in the runner wire format, one per line.
    pub fn transcript_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let wire = WireEvent::new(e.unit_index, e.phase, e.payload.clone(), e.wall_time_ms);
            out.push_str(&wire.to_line());
            out.push('\n');
        }
        out
    }

    /// Human-readable digest used as judge evidence.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for u in &self.units {
            let _ = writeln!(out, "[unit {}] {}", u.index, u.outcome.label());
            if let UnitOutcome::Failed { error_class, traceback } = &u.outcome {
                let _ = writeln!(out, "error class: {}", error_class.as_str());
                let _ = writeln!(out, "{}", traceback.trim_end());
            }
            if !u.stdout.is_empty() {
                let _ = writeln!(out, "stdout:\n{}", u.stdout.trim_end());
            }
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("runner protocol violation: {0}")]
    ProtocolViolation(String),
    /// The runner stopped before finishing; pending units are `Failed(Other)`.
    #[error("runner crashed: {message}")]
    RunnerCrashed { message: String, transcript: Box<ExecutionTranscript> },
    #[error("cannot launch runner: {0}")]
    Launch(String),
}

impl ExecError {
    /// The partial transcript, when the error carries one.
    pub fn transcript(&self) -> Option<&ExecutionTranscript> {
        match self {
            ExecError::RunnerCrashed { transcript, .. } => Some(transcript),
            _ => None,
        }
    }
}

#[derive(Default)]
struct OpenUnit {
    started_ms: u64,
    stdout: String,
    stderr: String,
    error: Option<String>,
}

struct Run<'a> {
    units: &'a [CodeUnit],
    limits: ExecLimits,
    t0: Instant,
    transcript: ExecutionTranscript,
    /// Position in `units` of the next unit without an outcome.
    next: usize,
    open: Option<OpenUnit>,
}

impl Run<'_> {
    fn now_ms(&self) -> u64 {
        self.t0.elapsed().as_millis() as u64
    }

    fn push(&mut self, unit_index: usize, phase: Phase, payload: String) {
        let wall_time_ms = self.now_ms();
        self.transcript.events.push(ExecutionEvent { unit_index, phase, payload, wall_time_ms });
    }

    fn expected(&self) -> Option<usize> {
        self.units.get(self.next).map(|u| u.index)
    }

    fn finish(&mut self, outcome: UnitOutcome) {
        let index = self.units[self.next].index;
        let open = self.open.take().unwrap_or_default();
        let wall_time_ms = self.now_ms().saturating_sub(open.started_ms);
        self.transcript.units.push(UnitRecord {
            index,
            outcome,
            stdout: open.stdout,
            stderr: open.stderr,
            wall_time_ms,
        });
        self.next += 1;
    }

    fn finish_rest(&mut self, outcome: UnitOutcome) {
        while self.next < self.units.len() {
            self.finish(outcome.clone());
        }
    }

    fn violation(&self, what: String) -> ExecError {
        ExecError::ProtocolViolation(what)
    }

    /// Handles one protocol event. Returns `true` when the run must stop
    /// consuming this session (abort policy fired).
    fn on_event(&mut self, ev: WireEvent) -> Result<bool, ExecError> {
        let Some(unit) = ev.unit else {
            return Err(self.violation(format!("event without unit in phase {:?}", ev.phase)));
        };
        if ev.phase == Phase::Fatal {
            return Err(self.violation(format!("fatal event tied to unit {unit}")));
        }
        match (ev.phase, self.open.is_some()) {
            (Phase::Start, false) => {
                if Some(unit) != self.expected() {
                    return Err(self.violation(format!(
                        "start for unit {unit}, expected {:?}",
                        self.expected()
                    )));
                }
                self.push(unit, Phase::Start, ev.payload);
                self.open = Some(OpenUnit { started_ms: self.now_ms(), ..Default::default() });
                Ok(false)
            }
            (Phase::Start, true) => Err(self.violation(format!("start for unit {unit} while another unit is open"))),
            (_, false) => Err(self.violation(format!("{:?} for unit {unit} outside start/end", ev.phase))),
            (phase, true) => {
                if Some(unit) != self.expected() {
                    return Err(self.violation(format!("{phase:?} for unit {unit} while unit {:?} is open", self.expected())));
                }
                match phase {
                    Phase::Stdout => self.open.as_mut().expect("open").stdout.push_str(&ev.payload),
                    Phase::Stderr => self.open.as_mut().expect("open").stderr.push_str(&ev.payload),
                    Phase::Error => {
                        let open = self.open.as_mut().expect("open");
                        if open.error.is_some() {
                            return Err(self.violation(format!("second error event for unit {unit}")));
                        }
                        open.error = Some(ev.payload.clone());
                    }
                    Phase::End => {}
                    Phase::Start | Phase::Fatal => unreachable!(),
                }
                self.push(unit, phase, ev.payload);
                if phase != Phase::End {
                    return Ok(false);
                }
                let error = self.open.as_mut().expect("open").error.take();
                match error {
                    None => {
                        self.finish(UnitOutcome::Succeeded);
                        Ok(false)
                    }
                    Some(traceback) => {
                        let error_class = classify_error(&traceback);
                        self.finish(UnitOutcome::Failed { error_class, traceback });
                        if self.limits.policy == ErrorPolicy::AbortOnError {
                            self.finish_rest(UnitOutcome::Skipped);
                            return Ok(true);
                        }
                        Ok(false)
                    }
                }
            }
        }
    }

    fn on_timeout(&mut self) {
        let index = self.units[self.next].index;
        if self.open.is_none() {
            self.push(index, Phase::Start, String::new());
            self.open = Some(OpenUnit { started_ms: self.now_ms(), ..Default::default() });
        }
        let note = format!("unit exceeded {}s timeout", self.limits.per_unit_timeout.as_secs_f64());
        self.push(index, Phase::End, note);
        self.finish(UnitOutcome::TimedOut);
        if self.limits.policy == ErrorPolicy::AbortOnError {
            self.finish_rest(UnitOutcome::Skipped);
        }
    }

    fn crashed(&mut self, message: String) -> ExecError {
        if let Some(open) = self.open.as_ref() {
            let index = self.units[self.next].index;
            let traceback = open.error.clone().unwrap_or_else(|| message.clone());
            self.push(index, Phase::End, String::new());
            self.finish(UnitOutcome::Failed { error_class: ErrorClass::Other, traceback });
        }
        self.finish_rest(UnitOutcome::Failed { error_class: ErrorClass::Other, traceback: message.clone() });
        self.transcript.total_wall_time_ms = self.now_ms();
        ExecError::RunnerCrashed { message, transcript: Box::new(std::mem::take(&mut self.transcript)) }
    }
}

/// Runs `units` in order inside `ws`. A timed-out unit kills the session;
/// under `ContinueOnError` a fresh session runs the remaining units.
pub fn run_units(
    ws: &Workspace,
    units: &[CodeUnit],
    limits: &ExecLimits,
    runner: &dyn Runner,
) -> Result<ExecutionTranscript, ExecError> {
    let mut run = Run {
        units,
        limits: *limits,
        t0: Instant::now(),
        transcript: ExecutionTranscript::default(),
        next: 0,
        open: None,
    };
    'sessions: while run.next < units.len() {
        let mut session = runner.launch(ws, &units[run.next..], limits)?;
        let mut deadline = Instant::now() + limits.per_unit_timeout;
        loop {
            if run.next >= units.len() {
                // All outcomes known; let a well-behaved runner exit.
                match session.next(Duration::from_secs(5)) {
                    Some(SessionEvent::Exited(_)) => {}
                    Some(SessionEvent::Event(ev)) if ev.phase == Phase::Fatal => {
                        tracing::warn!("runner reported fatal error after the last unit: {}", ev.payload);
                    }
                    Some(SessionEvent::Event(ev)) => {
                        session.kill();
                        return Err(run.violation(format!("{:?} event after the last unit", ev.phase)));
                    }
                    Some(SessionEvent::Invalid { line, error }) => {
                        session.kill();
                        return Err(run.violation(format!("{error}: {line}")));
                    }
                    None => session.kill(),
                }
                break 'sessions;
            }
            let wait = deadline.saturating_duration_since(Instant::now());
            if wait.is_zero() {
                session.kill();
                run.on_timeout();
                continue 'sessions;
            }
            match session.next(wait) {
                None => continue,
                Some(SessionEvent::Invalid { line, error }) => {
                    session.kill();
                    return Err(run.violation(format!("{error}: {line}")));
                }
                Some(SessionEvent::Exited(code)) => {
                    let message = match code {
                        Some(c) => format!("runner exited with status {c} before finishing all units"),
                        None => "runner exited before finishing all units".to_string(),
                    };
                    return Err(run.crashed(message));
                }
                Some(SessionEvent::Event(ev)) if ev.phase == Phase::Fatal => {
                    session.kill();
                    return Err(run.crashed(format!("runner fatal error: {}", ev.payload)));
                }
                Some(SessionEvent::Event(ev)) => {
                    let was_open = run.open.is_some();
                    let stop = match run.on_event(ev) {
                        Ok(stop) => stop,
                        Err(e) => {
                            session.kill();
                            return Err(e);
                        }
                    };
                    if stop {
                        session.kill();
                        break 'sessions;
                    }
                    // A new unit's clock starts at its start event, or after
                    // the previous unit ended.
                    if was_open != run.open.is_some() {
                        deadline = Instant::now() + limits.per_unit_timeout;
                    }
                }
            }
        }
    }
    run.transcript.total_wall_time_ms = run.now_ms();
    Ok(run.transcript)
}

pub const TIMEOUT_RATIONALE: &str = "timeout";
pub const SKIPPED_RATIONALE: &str = "not executed: aborted after earlier failure";

/// Deterministic per-unit C1 verdicts: PASS iff the unit succeeded.
pub fn c1_verdicts(transcript: &ExecutionTranscript, run_id: u32) -> BTreeMap<usize, Verdict> {
    transcript
        .units
        .iter()
        .map(|u| {
            let v = match &u.outcome {
                UnitOutcome::Succeeded => Verdict::pass(ItemId::C1, format!("unit {} executed without error", u.index), run_id),
                UnitOutcome::TimedOut => Verdict::fail(ItemId::C1, TIMEOUT_RATIONALE, run_id),
                UnitOutcome::Skipped => Verdict::fail(ItemId::C1, SKIPPED_RATIONALE, run_id),
                UnitOutcome::Failed { error_class, traceback } => {
                    let last = traceback.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
                    Verdict::fail(
                        ItemId::C1,
                        format!("unit {} failed ({}): {last}", u.index, error_class.as_str()),
                        run_id,
                    )
                }
            };
            (u.index, v)
        })
        .collect()
}
