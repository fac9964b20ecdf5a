use std::fs;
use std::io;
use std::path::Path;

use super::*;

fn toml_str(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Writes `bundle` in the on-disk layout under `dir`.
///
/// Data files are copied from `bundle.root` when present there; otherwise the
/// caller is expected to place them before loading.
pub fn write_bundle(bundle: &ResearchBundle, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir.join(CODE_DIR))?;
    let mut manifest = format!(
        "task_id = {}\ncategory = {}\nhas_demo = {}\nproposes_new_method = {}\n",
        toml_str(&bundle.task_id),
        toml_str(bundle.category.as_str()),
        bundle.has_demo,
        bundle.proposes_new_method,
    );
    for d in &bundle.data_manifest {
        manifest.push_str(&format!(
            "\n[[data]]\npath = {}\nrole = {}\nsha256 = {}\n",
            toml_str(&d.path),
            toml_str(&d.role),
            toml_str(&d.checksum)
        ));
        let src = bundle.root.join(&d.path);
        let dst = dir.join(&d.path);
        if src.is_file() && src != dst {
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::copy(&src, &dst)?;
        }
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    if let Some(p) = &bundle.prompt {
        fs::write(dir.join(PROMPT_FILE), &p.0)?;
    }
    fs::write(dir.join(PLAN_FILE), &bundle.plan.0)?;
    if let Some(w) = &bundle.walkthrough {
        fs::write(dir.join(WALKTHROUGH_FILE), &w.0)?;
    }
    fs::write(dir.join(REPORT_FILE), &bundle.report.0)?;
    let results = serde_json::to_string_pretty(&bundle.recorded_results).map_err(io::Error::other)?;
    fs::write(dir.join(RESULTS_FILE), results)?;
    for u in &bundle.code_units {
        let stem = format!("{:03}_{}", u.index, u.kind.as_str());
        fs::write(dir.join(CODE_DIR).join(format!("{stem}.txt")), &u.source)?;
        if let Some(out) = &u.recorded_output {
            fs::write(dir.join(CODE_DIR).join(format!("{stem}.out")), out)?;
        }
        if !u.declared_inputs.is_empty() {
            let mut text = u.declared_inputs.join("\n");
            text.push('\n');
            fs::write(dir.join(CODE_DIR).join(format!("{stem}.inputs")), text)?;
        }
    }
    Ok(())
}
