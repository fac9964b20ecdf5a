//! Runner backends. A runner turns a list of code units into a stream of
//! protocol events; the executor enforces ordering, timeouts and policy.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::os::unix::process::CommandExt;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{LimitsEcho, ManifestUnit, Phase, SessionMode, UnitManifest, WireEvent};
use super::{ExecError, ExecLimits};
use crate::bundle::CodeUnit;
use crate::sandbox::Workspace;

/// Scratch area inside the workspace output directory.
pub const SCRATCH_DIR: &str = ".execeval";

#[derive(Debug)]
pub enum SessionEvent {
    Event(WireEvent),
    /// A stdout line that is not a valid protocol event.
    Invalid { line: String, error: String },
    Exited(Option<i32>),
}

pub trait RunnerSession: Send {
    /// Next event, or `None` if nothing arrived within `timeout`.
    fn next(&mut self, timeout: Duration) -> Option<SessionEvent>;
    fn kill(&mut self);
}

pub trait Runner: Send + Sync {
    fn identity(&self) -> String;

    /// Starts executing `units` (in order) inside `ws`.
    fn launch(
        &self,
        ws: &Workspace,
        units: &[CodeUnit],
        limits: &ExecLimits,
    ) -> Result<Box<dyn RunnerSession>, ExecError>;
}

struct ChannelSession {
    rx: Receiver<SessionEvent>,
    child: Arc<Mutex<Option<Child>>>,
    cancelled: Arc<AtomicBool>,
    finished: bool,
}

impl RunnerSession for ChannelSession {
    fn next(&mut self, timeout: Duration) -> Option<SessionEvent> {
        if self.finished {
            return Some(SessionEvent::Exited(None));
        }
        match self.rx.recv_timeout(timeout) {
            Ok(ev) => {
                if matches!(ev, SessionEvent::Exited(_)) {
                    self.finished = true;
                }
                Some(ev)
            }
            Err(RecvTimeoutError::Timeout) => None,
            Err(RecvTimeoutError::Disconnected) => {
                self.finished = true;
                Some(SessionEvent::Exited(None))
            }
        }
    }

    fn kill(&mut self) {
        self.cancelled.store(true, Ordering::SeqCst);
        if let Some(child) = self.child.lock().expect("child lock").as_mut() {
            kill_group(child);
        }
    }
}

impl Drop for ChannelSession {
    fn drop(&mut self) {
        if !self.finished {
            self.kill();
        }
    }
}

/// Kills the child and everything it spawned; each child leads its own
/// process group.
fn kill_group(child: &mut Child) {
    if let Ok(pid) = i32::try_from(child.id()) {
        // SAFETY: plain syscall on a process group we created.
        unsafe {
            libc::kill(-pid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
}

/// Polls a shared child until it exits, so `kill` never waits on the lock.
fn wait_shared(child: &Arc<Mutex<Option<Child>>>) -> Option<ExitStatus> {
    loop {
        {
            let mut guard = child.lock().expect("child lock");
            match guard.as_mut() {
                Some(c) => match c.try_wait() {
                    Ok(Some(status)) => {
                        *guard = None;
                        return Some(status);
                    }
                    Ok(None) => {}
                    Err(_) => {
                        *guard = None;
                        return None;
                    }
                },
                None => return None,
            }
        }
        thread::sleep(Duration::from_millis(2));
    }
}

fn read_all(mut r: impl Read + Send + 'static) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

fn write_sources(ws: &Workspace, units: &[CodeUnit]) -> Result<Vec<PathBuf>, ExecError> {
    let dir = ws.output_dir.join(SCRATCH_DIR).join("units");
    fs::create_dir_all(&dir).map_err(|e| ExecError::Launch(format!("{}: {e}", dir.display())))?;
    units
        .iter()
        .map(|u| {
            let path = dir.join(format!("{:03}_{}.txt", u.index, u.kind.as_str()));
            fs::write(&path, &u.source)
                .map_err(|e| ExecError::Launch(format!("{}: {e}", path.display())))?;
            Ok(path)
        })
        .collect()
}

/// Minimal environment for research code: enough to find interpreters and
/// packages, plus the output directory.
fn base_command(program: &str, ws: &Workspace) -> Command {
    let mut cmd = Command::new(program);
    cmd.current_dir(&ws.root).env_clear().process_group(0);
    for var in ["PATH", "HOME", "LANG", "LC_ALL", "TMPDIR", "PYTHONPATH", "VIRTUAL_ENV"] {
        if let Ok(v) = std::env::var(var) {
            cmd.env(var, v);
        }
    }
    cmd.env("EXECEVAL_OUTPUT_DIR", &ws.output_dir);
    cmd.env("PYTHONUNBUFFERED", "1");
    cmd
}

/// Fallback runner: each unit runs as its own process, `interpreter <file>`.
/// Units do not share state.
#[derive(Debug, Clone)]
pub struct SubprocessRunner {
    pub interpreter: Vec<String>,
}

impl SubprocessRunner {
    pub fn new(interpreter: Vec<String>) -> Self {
        assert!(!interpreter.is_empty(), "interpreter command must not be empty");
        SubprocessRunner { interpreter }
    }
}

impl Runner for SubprocessRunner {
    fn identity(&self) -> String {
        format!("subprocess:{}", self.interpreter.join(" "))
    }

    fn launch(
        &self,
        ws: &Workspace,
        units: &[CodeUnit],
        _limits: &ExecLimits,
    ) -> Result<Box<dyn RunnerSession>, ExecError> {
        let sources = write_sources(ws, units)?;
        let (tx, rx) = mpsc::channel();
        let child: Arc<Mutex<Option<Child>>> = Arc::new(Mutex::new(None));
        let cancelled = Arc::new(AtomicBool::new(false));
        let jobs: Vec<(usize, PathBuf)> = units.iter().map(|u| u.index).zip(sources).collect();
        let interpreter = self.interpreter.clone();
        let ws = ws.clone();
        let (child_t, cancelled_t) = (child.clone(), cancelled.clone());
        thread::spawn(move || {
            run_sequential(&interpreter, &ws, &jobs, &tx, &child_t, &cancelled_t);
            let _ = tx.send(SessionEvent::Exited(Some(0)));
        });
        Ok(Box::new(ChannelSession { rx, child, cancelled, finished: false }))
    }
}

fn run_sequential(
    interpreter: &[String],
    ws: &Workspace,
    jobs: &[(usize, PathBuf)],
    tx: &Sender<SessionEvent>,
    child_slot: &Arc<Mutex<Option<Child>>>,
    cancelled: &AtomicBool,
) {
    let t0 = Instant::now();
    let ms = |t0: Instant| t0.elapsed().as_millis() as u64;
    let send = |unit, phase, payload: String| {
        let _ = tx.send(SessionEvent::Event(WireEvent::new(unit, phase, payload, ms(t0))));
    };
    for (unit, path) in jobs {
        if cancelled.load(Ordering::SeqCst) {
            return;
        }
        send(*unit, Phase::Start, String::new());
        let mut cmd = base_command(&interpreter[0], ws);
        cmd.args(&interpreter[1..])
            .arg(path)
            .env("EXECEVAL_UNIT_INDEX", unit.to_string())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        let mut spawned = match cmd.spawn() {
            Ok(c) => c,
            Err(e) => {
                send(*unit, Phase::Error, format!("failed to start interpreter `{}`: {e}", interpreter[0]));
                send(*unit, Phase::End, String::new());
                continue;
            }
        };
        let out = read_all(spawned.stdout.take().expect("piped"));
        let err = read_all(spawned.stderr.take().expect("piped"));
        *child_slot.lock().expect("child lock") = Some(spawned);
        let status = wait_shared(child_slot);
        let stdout = out.join().unwrap_or_default();
        let stderr = err.join().unwrap_or_default();
        if cancelled.load(Ordering::SeqCst) {
            return;
        }
        if !stdout.is_empty() {
            send(*unit, Phase::Stdout, stdout);
        }
        if !stderr.is_empty() {
            send(*unit, Phase::Stderr, stderr.clone());
        }
        match status {
            Some(s) if s.success() => {}
            other => {
                let traceback = if stderr.trim().is_empty() {
                    match other {
                        Some(s) => format!("process exited with {s}"),
                        None => "process status unavailable".to_string(),
                    }
                } else {
                    stderr
                };
                send(*unit, Phase::Error, traceback);
            }
        }
        send(*unit, Phase::End, String::new());
    }
}

/// Runner that delegates to an external shim speaking the JSONL protocol.
#[derive(Debug, Clone)]
pub struct ShimRunner {
    pub command: Vec<String>,
    pub session_mode: SessionMode,
}

impl ShimRunner {
    pub fn new(command: Vec<String>, session_mode: SessionMode) -> Self {
        assert!(!command.is_empty(), "shim command must not be empty");
        ShimRunner { command, session_mode }
    }

    fn write_manifest(
        &self,
        ws: &Workspace,
        units: &[CodeUnit],
        limits: &ExecLimits,
    ) -> Result<PathBuf, ExecError> {
        let sources = write_sources(ws, units)?;
        let manifest = UnitManifest {
            workspace_root: ws.root.clone(),
            units: units
                .iter()
                .zip(sources)
                .map(|(u, source_path)| ManifestUnit { index: u.index, kind: u.kind, source_path })
                .collect(),
            session_mode: self.session_mode,
            limits: LimitsEcho {
                per_unit_timeout_secs: limits.per_unit_timeout.as_secs(),
                error_policy: limits.policy,
            },
        };
        let path = ws.output_dir.join(SCRATCH_DIR).join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| ExecError::Launch(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

impl Runner for ShimRunner {
    fn identity(&self) -> String {
        format!("shim:{}", self.command.join(" "))
    }

    fn launch(
        &self,
        ws: &Workspace,
        units: &[CodeUnit],
        limits: &ExecLimits,
    ) -> Result<Box<dyn RunnerSession>, ExecError> {
        let manifest = self.write_manifest(ws, units, limits)?;
        let mut cmd = base_command(&self.command[0], ws);
        cmd.args(&self.command[1..])
            .arg("--manifest")
            .arg(&manifest)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        let mut spawned = cmd
            .spawn()
            .map_err(|e| ExecError::Launch(format!("cannot start shim `{}`: {e}", self.command[0])))?;
        let stdout = spawned.stdout.take().expect("piped");
        let stderr = spawned.stderr.take().expect("piped");
        let child = Arc::new(Mutex::new(Some(spawned)));
        let cancelled = Arc::new(AtomicBool::new(false));
        let (tx, rx) = mpsc::channel();

        thread::spawn(move || {
            for line in BufReader::new(stderr).lines().map_while(Result::ok) {
                tracing::debug!(target: "execeval::shim", "{line}");
            }
        });
        let child_t = child.clone();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let line = match line {
                    Ok(l) => l,
                    Err(e) => {
                        let _ = tx.send(SessionEvent::Invalid { line: String::new(), error: e.to_string() });
                        break;
                    }
                };
                if line.trim().is_empty() {
                    continue;
                }
                let ev = match WireEvent::parse_line(&line) {
                    Ok(ev) => SessionEvent::Event(ev),
                    Err(e) => SessionEvent::Invalid { line, error: e.0 },
                };
                if tx.send(ev).is_err() {
                    break;
                }
            }
            let code = wait_shared(&child_t).and_then(|s| s.code());
            let _ = tx.send(SessionEvent::Exited(code));
        });
        Ok(Box::new(ChannelSession { rx, child, cancelled, finished: false }))
    }
}

/// Resolves a command name against `PATH`.
pub fn which(program: &str) -> Option<PathBuf> {
    if program.contains('/') {
        let p = Path::new(program);
        return p.is_file().then(|| p.to_path_buf());
    }
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths).map(|d| d.join(program)).find(|p| p.is_file())
    })
}
