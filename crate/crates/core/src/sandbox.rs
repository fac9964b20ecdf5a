//! Private, tamper-detected workspaces.
//!
//! A workspace is a byte-identical copy of a bundle directory with a single
//! writable `output/` area. A content-hash snapshot of everything outside
//! `output/` is taken at creation; [`verify_integrity`] diffs the current tree
//! against it. Enforcement is detect-and-report, not OS-level prevention.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::bundle::{BundleView, ResearchBundle};
use crate::digest;

pub const OUTPUT_DIR: &str = "output";

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("i/o failure on {path}: {message}")]
    IoFailure { path: String, message: String },
    #[error("insufficient space while writing {path}")]
    InsufficientSpace { path: String },
    #[error("workspace base {base} overlaps bundle {bundle}")]
    Overlap { base: String, bundle: String },
}

impl SandboxError {
    fn from_io(path: &Path, err: io::Error) -> Self {
        if err.kind() == io::ErrorKind::StorageFull {
            SandboxError::InsufficientSpace { path: path.display().to_string() }
        } else {
            SandboxError::IoFailure { path: path.display().to_string(), message: err.to_string() }
        }
    }
}

/// Relative path → SHA-256 of every file outside the output directory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub files: BTreeMap<String, String>,
}

impl TreeSnapshot {
    /// Single digest over the whole snapshot.
    pub fn digest(&self) -> String {
        let mut text = String::new();
        for (path, d) in &self.files {
            text.push_str(path);
            text.push('\0');
            text.push_str(d);
            text.push('\n');
        }
        digest::sha256_hex(text.as_bytes())
    }
}

fn rel_string(path: &Path) -> String {
    path.to_string_lossy().replace('\\', "/")
}

/// Hashes every file under `root`, skipping the top-level `exclude` entry.
/// Symlinks are hashed by their target path, not followed.
pub fn snapshot_tree(root: &Path, exclude: Option<&str>) -> Result<TreeSnapshot, SandboxError> {
    let mut files = BTreeMap::new();
    let walker = WalkDir::new(root)
        .follow_links(false)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| match exclude {
            Some(ex) => e.depth() != 1 || e.file_name() != ex,
            None => true,
        });
    for entry in walker {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf());
            match e.into_io_error() {
                Some(io) => SandboxError::from_io(&path, io),
                None => SandboxError::IoFailure {
                    path: path.display().to_string(),
                    message: "filesystem loop".into(),
                },
            }
        })?;
        let ft = entry.file_type();
        if ft.is_dir() {
            continue;
        }
        let rel = rel_string(entry.path().strip_prefix(root).expect("walk stays under root"));
        let d = if ft.is_symlink() {
            let target = fs::read_link(entry.path()).map_err(|e| SandboxError::from_io(entry.path(), e))?;
            digest::sha256_hex(format!("symlink:{}", target.display()).as_bytes())
        } else {
            digest::sha256_file(entry.path()).map_err(|e| SandboxError::from_io(entry.path(), e))?
        };
        files.insert(rel, d);
    }
    Ok(TreeSnapshot { files })
}

#[derive(Debug, Clone)]
pub struct Workspace {
    pub run_id: String,
    pub root: PathBuf,
    pub output_dir: PathBuf,
    pub baseline: TreeSnapshot,
}

/// Copies the whole bundle directory into a fresh workspace under `base`.
pub fn create_workspace(
    bundle: &ResearchBundle,
    run_id: &str,
    base: &Path,
) -> Result<Workspace, SandboxError> {
    create_from_dir(&bundle.root, run_id, base, &[])
}

/// Like [`create_workspace`] but omits files of artifacts the view hides, so
/// code running in the workspace cannot read them either.
pub fn create_workspace_for_view(
    view: &BundleView,
    run_id: &str,
    base: &Path,
) -> Result<Workspace, SandboxError> {
    create_from_dir(&view.source().root, run_id, base, &view.excluded_files())
}

fn create_from_dir(
    src: &Path,
    run_id: &str,
    base: &Path,
    excluded: &[&str],
) -> Result<Workspace, SandboxError> {
    fs::create_dir_all(base).map_err(|e| SandboxError::from_io(base, e))?;
    let real_src = src.canonicalize().map_err(|e| SandboxError::from_io(src, e))?;
    let real_base = base.canonicalize().map_err(|e| SandboxError::from_io(base, e))?;
    if real_base.starts_with(&real_src) {
        return Err(SandboxError::Overlap {
            base: real_base.display().to_string(),
            bundle: real_src.display().to_string(),
        });
    }
    let root = real_base.join(format!("{run_id}-{}", uuid::Uuid::new_v4().simple()));
    fs::create_dir(&root).map_err(|e| SandboxError::from_io(&root, e))?;

    let result = copy_tree(&real_src, &root, excluded).and_then(|()| {
        let output_dir = root.join(OUTPUT_DIR);
        fs::create_dir_all(&output_dir).map_err(|e| SandboxError::from_io(&output_dir, e))?;
        let baseline = snapshot_tree(&root, Some(OUTPUT_DIR))?;
        Ok(Workspace { run_id: run_id.to_string(), root: root.clone(), output_dir, baseline })
    });
    if result.is_err() {
        let _ = fs::remove_dir_all(&root);
    }
    result
}

fn copy_tree(src: &Path, dst: &Path, excluded: &[&str]) -> Result<(), SandboxError> {
    let walker = WalkDir::new(src)
        .follow_links(false)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| {
            if e.depth() == 0 {
                return true;
            }
            let rel = rel_string(e.path().strip_prefix(src).expect("under src"));
            !excluded.iter().any(|ex| rel == *ex)
        });
    for entry in walker {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| src.to_path_buf());
            SandboxError::IoFailure { path: path.display().to_string(), message: e.to_string() }
        })?;
        let rel = entry.path().strip_prefix(src).expect("under src");
        if rel.as_os_str().is_empty() {
            continue;
        }
        let target = dst.join(rel);
        let ft = entry.file_type();
        if ft.is_dir() {
            fs::create_dir_all(&target).map_err(|e| SandboxError::from_io(&target, e))?;
        } else if ft.is_symlink() {
            let link = fs::read_link(entry.path()).map_err(|e| SandboxError::from_io(entry.path(), e))?;
            make_symlink(&link, &target)?;
        } else {
            // Read explicitly so failures name the source file.
            let bytes = fs::read(entry.path()).map_err(|e| SandboxError::from_io(entry.path(), e))?;
            fs::write(&target, bytes).map_err(|e| SandboxError::from_io(&target, e))?;
            let perms = entry
                .metadata()
                .map_err(|e| SandboxError::IoFailure {
                    path: entry.path().display().to_string(),
                    message: e.to_string(),
                })?
                .permissions();
            fs::set_permissions(&target, perms).map_err(|e| SandboxError::from_io(&target, e))?;
        }
    }
    Ok(())
}

#[cfg(unix)]
fn make_symlink(link: &Path, target: &Path) -> Result<(), SandboxError> {
    std::os::unix::fs::symlink(link, target).map_err(|e| SandboxError::from_io(target, e))
}

#[cfg(not(unix))]
fn make_symlink(_link: &Path, target: &Path) -> Result<(), SandboxError> {
    Err(SandboxError::IoFailure {
        path: target.display().to_string(),
        message: "symlinks are not supported on this platform".into(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrityReport {
    pub modified: Vec<String>,
    pub deleted: Vec<String>,
    pub added_outside_output: Vec<String>,
}

impl IntegrityReport {
    pub fn is_clean(&self) -> bool {
        self.modified.is_empty() && self.deleted.is_empty() && self.added_outside_output.is_empty()
    }

    pub fn touched_paths(&self) -> impl Iterator<Item = &str> {
        self.modified
            .iter()
            .chain(&self.deleted)
            .chain(&self.added_outside_output)
            .map(String::as_str)
    }

    pub fn summary(&self) -> String {
        if self.is_clean() {
            return "workspace integrity clean".into();
        }
        let mut parts = Vec::new();
        if !self.modified.is_empty() {
            parts.push(format!("modified: {}", self.modified.join(", ")));
        }
        if !self.deleted.is_empty() {
            parts.push(format!("deleted: {}", self.deleted.join(", ")));
        }
        if !self.added_outside_output.is_empty() {
            parts.push(format!("added outside output/: {}", self.added_outside_output.join(", ")));
        }
        format!("workspace integrity violated ({})", parts.join("; "))
    }
}

pub fn diff_snapshots(baseline: &TreeSnapshot, current: &TreeSnapshot) -> IntegrityReport {
    let mut report = IntegrityReport::default();
    for (path, d) in &baseline.files {
        match current.files.get(path) {
            Some(now) if now != d => report.modified.push(path.clone()),
            Some(_) => {}
            None => report.deleted.push(path.clone()),
        }
    }
    for path in current.files.keys() {
        if !baseline.files.contains_key(path) {
            report.added_outside_output.push(path.clone());
        }
    }
    report
}

pub fn verify_integrity(ws: &Workspace) -> Result<IntegrityReport, SandboxError> {
    let current = snapshot_tree(&ws.root, Some(OUTPUT_DIR))?;
    Ok(diff_snapshots(&ws.baseline, &current))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeardownReport {
    pub root: PathBuf,
    pub removed: bool,
    pub retained: bool,
    pub note: String,
}

/// Removes the workspace root unless `keep` is set. Safe to call repeatedly;
/// failures are logged and reported, never raised.
pub fn teardown(ws: &Workspace, keep: bool) -> TeardownReport {
    let root = ws.root.clone();
    if keep {
        return TeardownReport {
            note: format!("workspace retained at {}", root.display()),
            root,
            removed: false,
            retained: true,
        };
    }
    if !root.exists() {
        return TeardownReport { root, removed: false, retained: false, note: "already removed".into() };
    }
    match fs::remove_dir_all(&root) {
        Ok(()) => TeardownReport { root, removed: true, retained: false, note: "removed".into() },
        Err(e) => {
            tracing::warn!(path = %root.display(), error = %e, "workspace teardown failed");
            TeardownReport { root, removed: false, retained: true, note: format!("teardown failed: {e}") }
        }
    }
}
