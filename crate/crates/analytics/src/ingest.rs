//! Turn directories of finished sessions into [`RunRecord`]s.
//!
//! A run set is one directory; every subdirectory holding a `verdict.json`
//! is one run. Case attributes come from the sidecar file, looked up by
//! case id.

use std::fs;
use std::path::{Path, PathBuf};

use patchrepro_core::envprep::{read_sidecar, CaseMetadata};
use patchrepro_core::profile::ProfileId;
use patchrepro_core::sessionrunner::{artifact, default_utilities, replay_trace, SessionRecord};
use patchrepro_core::verdict::VerdictFile;

use crate::runs::RunRecord;

/// Sidecar metadata looked for at the root of a run-set directory.
pub const SIDECAR_FILE: &str = "cases.json";

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("{0}: no runs found")]
    Empty(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSet {
    pub dir: PathBuf,
    pub records: Vec<RunRecord>,
}

fn malformed(path: &Path, message: impl ToString) -> IngestError {
    IngestError::Malformed { path: path.to_path_buf(), message: message.to_string() }
}

fn run_dirs(root: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let io = |e| IngestError::Io { path: root.to_path_buf(), source: e };
    let mut dirs = Vec::new();
    if root.join(artifact::VERDICT).is_file() {
        dirs.push(root.to_path_buf());
    }
    for entry in fs::read_dir(root).map_err(io)? {
        let p = entry.map_err(io)?.path();
        if p.is_dir() && p.join(artifact::VERDICT).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Read one run directory. `session.json` and `trace.jsonl` are optional;
/// without them the usage fields stay zero.
pub fn load_run(dir: &Path, run_index: u32, metadata: &[CaseMetadata]) -> Result<RunRecord, IngestError> {
    let vpath = dir.join(artifact::VERDICT);
    let v = VerdictFile::read(&vpath).map_err(|e| malformed(&vpath, e))?;
    let mut r = RunRecord::new(v.case_id.clone(), v.success, v.elapsed_min, v.cost_usd);
    r.run_index = run_index;

    let spath = dir.join(artifact::SESSION);
    if spath.is_file() {
        let text = fs::read_to_string(&spath).map_err(|e| IngestError::Io { path: spath.clone(), source: e })?;
        let s: SessionRecord = serde_json::from_str(&text).map_err(|e| malformed(&spath, e))?;
        r.model_label = s.model_label;
        r.profile = s.profile.parse::<ProfileId>().map_err(|e| malformed(&spath, e))?;
    }
    let tpath = dir.join(artifact::TRACE);
    if tpath.is_file() {
        let summary = replay_trace(&tpath, &default_utilities()).map_err(|e| malformed(&tpath, e))?;
        let c = summary.counters;
        r.tool_counts = c.by_category;
        r.poc_iterations = c.poc_iterations;
        r.breakpoints_set = c.breakpoints_set;
        r.breakpoints_hit = c.breakpoints_hit;
    }
    if let Some(m) = metadata.iter().find(|m| m.case_id == r.case_id) {
        r.subsystem = m.subsystem.clone();
        r.is_race = m.is_race;
        r.vuln_type = m.vuln_type;
        r.commit_msg_level = m.commit_msg_level;
        r.submit_time = m.submit_time;
    }
    r.validate().map_err(|e| malformed(&vpath, e))?;
    Ok(r)
}

/// Load every run below `root`. `sidecar` overrides `root/cases.json`.
pub fn load_run_set(root: &Path, run_index: u32, sidecar: Option<&Path>) -> Result<RunSet, IngestError> {
    let default_sidecar = root.join(SIDECAR_FILE);
    let sidecar = sidecar.map(Path::to_path_buf).or_else(|| default_sidecar.is_file().then_some(default_sidecar));
    let metadata = match &sidecar {
        Some(p) => read_sidecar(p).map_err(|e| malformed(p, e))?,
        None => Vec::new(),
    };
    let mut records = Vec::new();
    for dir in run_dirs(root)? {
        records.push(load_run(&dir, run_index, &metadata)?);
    }
    if records.is_empty() {
        return Err(IngestError::Empty(root.to_path_buf()));
    }
    records.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok(RunSet { dir: root.to_path_buf(), records })
}
