//! Batch runs from a manifest, executed in parallel.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::emit::emit;
use super::scenario::Scenario;
use super::sim::{run, ControlMode, RunResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchEntry {
    /// Scenario file, relative to the manifest.
    pub scenario: PathBuf,
    #[serde(default)]
    pub control: ControlMode,
    #[serde(default)]
    pub t_max: Option<f64>,
    /// Output subdirectory; defaults to `<scenario name>-<control>`.
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Output root, relative to the manifest.
    pub out_dir: PathBuf,
    pub runs: Vec<BatchEntry>,
}

/// Outcome of one manifest entry; `Err` holds a runtime error message.
#[derive(Debug)]
pub struct BatchOutcome {
    pub dir: PathBuf,
    pub result: Result<RunResult, String>,
}

fn control_name(c: ControlMode) -> String {
    serde_json::to_string(&c).unwrap_or_default().trim_matches('"').to_string()
}

fn run_entry(base: &Path, out_root: &Path, e: &BatchEntry) -> BatchOutcome {
    let path = base.join(&e.scenario);
    let mut dir = out_root.join(e.name.clone().unwrap_or_else(|| {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
        format!("{stem}-{}", control_name(e.control))
    }));
    let result = (|| {
        let sc = Scenario::load(&path).map_err(|e| e.to_string())?;
        if e.name.is_none() {
            dir = out_root.join(format!("{}-{}", sc.name, control_name(e.control)));
        }
        let setup = sc.build().map_err(|e| e.to_string())?;
        let reference = setup.reference().map_err(|e| e.to_string())?;
        let out = run(&setup, &reference, e.control, e.t_max).map_err(|e| e.to_string())?;
        emit(&out, &dir, setup.vehicle.t_min, setup.vehicle.t_max).map_err(|e| e.to_string())?;
        Ok(out.result)
    })();
    BatchOutcome { dir, result }
}

pub fn load_manifest(path: &Path) -> Result<Manifest, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("cannot parse {}: {e}", path.display()))
}

/// Run every entry independently; results come back in manifest order.
pub fn run_batch(manifest_path: &Path) -> Result<Vec<BatchOutcome>, String> {
    let m = load_manifest(manifest_path)?;
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let out_root = base.join(&m.out_dir);
    Ok(m.runs.par_iter().map(|e| run_entry(&base, &out_root, e)).collect())
}
