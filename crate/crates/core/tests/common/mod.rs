//! Shared fixtures for integration tests: a small git repository with one
//! fix commit, and helpers that prepare environments and run scripted
//! sessions on the mock backend.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use patchrepro_core::envprep::{apply_capability_profile, prepare_environment, resolve_task, BuilderSpec, PatchTask, ReproEnvironment};
use patchrepro_core::profile::{CapabilityProfile, ProfileId};
use patchrepro_core::sessionrunner::{run_session, Budget, PriceTable, RunOptions, ScriptedModel, SessionArtifacts};
use patchrepro_core::verdict::{decide, Verdict};

pub mod gate_model;

pub fn fixtures() -> PathBuf {
    // resolves from any crate in the workspace
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn copy_tree(from: &Path, to: &Path) {
    for entry in walk(from) {
        let rel = entry.strip_prefix(from).unwrap();
        let dest = to.join(rel);
        fs::create_dir_all(dest.parent().unwrap()).unwrap();
        fs::copy(&entry, &dest).unwrap();
    }
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn git(repo: &Path, args: &[&str]) -> String {
    let out = Command::new("git")
        .current_dir(repo)
        .args(["-c", "user.name=Fixture", "-c", "user.email=fixture@example.org", "-c", "commit.gpgsign=false"])
        .args(args)
        .env("GIT_AUTHOR_DATE", "2024-05-01T12:00:00Z")
        .env("GIT_COMMITTER_DATE", "2024-05-01T12:00:00Z")
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .env("HOME", repo)
        .output()
        .expect("git runs");
    assert!(out.status.success(), "git {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// A repository with a base commit and the fix commit on top.
pub struct FixRepo {
    pub dir: tempfile::TempDir,
    pub fix: String,
    pub base: String,
}

impl FixRepo {
    pub fn path(&self) -> &Path {
        self.dir.path()
    }
}

pub fn fix_repo() -> FixRepo {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    git(root, &["init", "-q", "-b", "main"]);
    copy_tree(&fixtures().join("repo/base"), root);
    git(root, &["add", "-A"]);
    git(root, &["commit", "-q", "-m", "netfilter: nf_tables: add set bindings"]);
    let base = git(root, &["rev-parse", "HEAD"]).trim().to_string();
    copy_tree(&fixtures().join("repo/fix"), root);
    git(root, &["add", "-A"]);
    git(root, &["commit", "-q", "-F", fixtures().join("repo/fix.msg").to_str().unwrap()]);
    let fix = git(root, &["rev-parse", "HEAD"]).trim().to_string();
    FixRepo { dir, fix, base }
}

pub fn fix_message() -> String {
    fs::read_to_string(fixtures().join("repo/fix.msg")).unwrap()
}

pub fn scenario(name: &str) -> BuilderSpec {
    BuilderSpec::fixture(&fixtures().join("scenarios").join(format!("{name}.json")))
}

pub fn script(name: &str) -> ScriptedModel {
    ScriptedModel::from_file(&fixtures().join("scripts").join(format!("{name}.json"))).unwrap()
}

pub fn budget(limit: Duration) -> Budget {
    Budget { wall_clock_limit: limit, cost_limit: None, price_table: PriceTable::default() }
}

/// One prepared environment for a profile.
pub struct Prepared {
    pub task: PatchTask,
    pub env: ReproEnvironment,
    pub profile: CapabilityProfile,
}

pub fn prepare(repo: &FixRepo, scenario_name: &str, profile: ProfileId, work: &Path) -> Prepared {
    let profile = CapabilityProfile::from_id(profile.as_str()).unwrap();
    let ablations = BTreeSet::from([profile.id]);
    let task = resolve_task(repo.path(), &repo.fix, &ablations).unwrap();
    let env = prepare_environment(repo.path(), &task, &scenario(scenario_name), work).unwrap();
    let env = apply_capability_profile(&env, &profile).unwrap();
    Prepared { task, env, profile }
}

pub fn run(p: &Prepared, script_name: &str, out: &Path, limit: Duration) -> SessionArtifacts {
    let mut model = script(script_name);
    run_session(&p.task, &p.env, &mut model, &p.profile, &budget(limit), out, &RunOptions::default()).unwrap()
}

/// Prepare, run and judge one session in fresh directories under `root`.
pub fn run_case(
    repo: &FixRepo,
    scenario_name: &str,
    script_name: &str,
    profile: ProfileId,
    root: &Path,
) -> (SessionArtifacts, Verdict, PatchTask) {
    let p = prepare(repo, scenario_name, profile, &root.join("work"));
    let artifacts = run(&p, script_name, &root.join("session"), Duration::from_secs(120));
    let verdict = decide(&artifacts.dir, &p.task).unwrap();
    (artifacts, verdict, p.task)
}
