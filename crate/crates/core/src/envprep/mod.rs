//! Turns a fix commit into a [`PatchTask`] and a snapshot-backed
//! reproduction environment checked out at the commit's first parent.
//!
//! An environment directory holds `task.json`, `manifest.json`, `prep.log`,
//! `snapshot_ref.json`, the extracted source tree under `src/` and the
//! guest image. All JSON is written with a stable key order.

mod git;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use crate::guestvm::SnapshotRef;
use crate::guestvm::{BackendKind, GuestHandle, GuestImage, GuestOptions, MockImage, Transcript};
use crate::profile::{CapabilityProfile, ImageTransform, ProfileId, UnknownProfile};
use crate::util::{sha256_hex, to_stable_json, write_atomic};

pub const TASK_FILE: &str = "task.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PREP_LOG_FILE: &str = "prep.log";
pub const SNAPSHOT_REF_FILE: &str = "snapshot_ref.json";
pub const SOURCE_DIR: &str = "src";
/// Token echoed by the boot smoke test.
pub const SMOKE_SENTINEL: &str = "ready";
pub const MOCK_SMOKE_DEADLINE: Duration = Duration::from_secs(1);
pub const EXTERNAL_SMOKE_DEADLINE: Duration = Duration::from_secs(120);

const SYZBOT_LIKE: &str = include_str!("../../config/syzbot-like.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VulnType {
    UAF,
    DF,
    OOB,
    OTHER,
}

impl fmt::Display for VulnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VulnType::UAF => "UAF",
            VulnType::DF => "DF",
            VulnType::OOB => "OOB",
            VulnType::OTHER => "OTHER",
        })
    }
}

/// How much of the vulnerability a commit message discloses, 1 (least) to
/// 3 (most).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum CommitMsgLevel {
    L1,
    L2,
    L3,
}

impl CommitMsgLevel {
    pub fn as_u8(&self) -> u8 {
        (*self).into()
    }
}

impl TryFrom<u8> for CommitMsgLevel {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(Self::L1),
            2 => Ok(Self::L2),
            3 => Ok(Self::L3),
            _ => Err(format!("commit message level must be 1, 2 or 3, got {v}")),
        }
    }
}

impl From<CommitMsgLevel> for u8 {
    fn from(l: CommitMsgLevel) -> u8 {
        match l {
            CommitMsgLevel::L1 => 1,
            CommitMsgLevel::L2 => 2,
            CommitMsgLevel::L3 => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchTask {
    pub case_id: String,
    pub commit_id: String,
    pub parent_commit_id: String,
    pub diff_text: String,
    pub commit_message: Option<String>,
    pub subsystem_label: Option<String>,
    pub vuln_type: Option<VulnType>,
    pub is_race: Option<bool>,
    pub commit_msg_level: Option<CommitMsgLevel>,
    pub submit_time: Option<DateTime<Utc>>,
    pub ablations: BTreeSet<ProfileId>,
}

impl PatchTask {
    pub fn read(path: &Path) -> Result<Self, EnvPrepError> {
        read_json(path)
    }
}

/// One record of the sidecar metadata file. Case attributes are labelled
/// by hand, never inferred from the commit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseMetadata {
    pub case_id: String,
    /// fix commit the record describes; matched by prefix
    pub commit: String,
    #[serde(default)]
    pub subsystem: Option<String>,
    #[serde(default)]
    pub is_race: Option<bool>,
    #[serde(default)]
    pub vuln_type: Option<VulnType>,
    #[serde(default)]
    pub commit_msg_level: Option<CommitMsgLevel>,
    #[serde(default)]
    pub submit_time: Option<DateTime<Utc>>,
}

/// Read a sidecar file: a JSON array of [`CaseMetadata`] records.
pub fn read_sidecar(path: &Path) -> Result<Vec<CaseMetadata>, EnvPrepError> {
    read_json(path)
}

pub fn find_metadata<'a>(records: &'a [CaseMetadata], commit_id: &str) -> Option<&'a CaseMetadata> {
    records
        .iter()
        .find(|r| r.commit.len() >= 7 && commit_id.starts_with(&r.commit.to_ascii_lowercase()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuilderKind {
    ExternalKernelBuild,
    Fixture,
}

/// How an environment's guest is produced.
///
/// `fixture` reads parameter `scenario` (a mock scenario file). The
/// external builder runs parameter `command` as
/// `<command> --source <dir> --config <file> --out <dir> [--remove-utilities a,b]`
/// and expects `<out>/hypervisor.json` afterwards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuilderSpec {
    pub builder_id: String,
    pub kind: BuilderKind,
    #[serde(default)]
    pub parameters: BTreeMap<String, String>,
}

impl BuilderSpec {
    pub fn fixture(scenario: &Path) -> Self {
        Self {
            builder_id: "fixture".into(),
            kind: BuilderKind::Fixture,
            parameters: BTreeMap::from([("scenario".into(), scenario.to_string_lossy().into_owned())]),
        }
    }

    fn smoke_deadline(&self) -> Duration {
        if let Some(ms) = self.parameters.get("smoke_deadline_ms").and_then(|v| v.parse().ok()) {
            return Duration::from_millis(ms);
        }
        match self.kind {
            BuilderKind::Fixture => MOCK_SMOKE_DEADLINE,
            BuilderKind::ExternalKernelBuild => EXTERNAL_SMOKE_DEADLINE,
        }
    }

    fn param(&self, key: &str) -> Result<&str, EnvPrepError> {
        self.parameters
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| EnvPrepError::BuildFailed { prep_log: format!("builder {} lacks parameter `{key}`", self.builder_id) })
    }
}

/// A named kernel build configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigManifest {
    pub name: String,
    #[serde(default)]
    pub note: String,
    pub enabled: Vec<String>,
    pub forbidden: Vec<String>,
}

impl ConfigManifest {
    /// The checked-in `syzbot-like` manifest.
    pub fn syzbot_like() -> Self {
        serde_json::from_str(SYZBOT_LIKE).expect("bundled manifest parses")
    }

    /// The detector and debug info must be on and no forbidden option on.
    pub fn validate(&self) -> Result<(), String> {
        let on = |opt: &str| self.enabled.iter().any(|e| e == &format!("{opt}=y"));
        for required in ["CONFIG_KASAN", "CONFIG_DEBUG_INFO"] {
            if !on(required) {
                return Err(format!("{required} must be enabled"));
            }
        }
        if let Some(f) = self.forbidden.iter().find(|f| on(f)) {
            return Err(format!("{f} must not be enabled"));
        }
        Ok(())
    }

    fn fragment(&self) -> String {
        let mut s = String::new();
        for e in &self.enabled {
            s.push_str(e);
            s.push('\n');
        }
        for f in &self.forbidden {
            s.push_str(&format!("# {f} is not set\n"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReproEnvironment {
    pub env_id: String,
    pub env_dir: PathBuf,
    pub source_root: PathBuf,
    pub guest_image: GuestImage,
    pub config_manifest: Vec<String>,
    pub snapshot_ref: SnapshotRef,
    pub builder_id: String,
    pub toolchain_id: Option<String>,
    pub prep_log: String,
    pub content_digest: String,
    pub profile: ProfileId,
}

impl ReproEnvironment {
    pub fn load(env_dir: &Path) -> Result<Self, EnvPrepError> {
        read_json(&env_dir.join(MANIFEST_FILE))
    }

    pub fn task(&self) -> Result<PatchTask, EnvPrepError> {
        PatchTask::read(&self.env_dir.join(TASK_FILE))
    }

    fn persist(&self) -> Result<(), EnvPrepError> {
        write_atomic(&self.env_dir.join(MANIFEST_FILE), to_stable_json(self))?;
        write_atomic(&self.env_dir.join(PREP_LOG_FILE), &self.prep_log)?;
        write_atomic(&self.env_dir.join(SNAPSHOT_REF_FILE), to_stable_json(&self.snapshot_ref))?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EnvPrepError {
    #[error("unknown commit `{0}`")]
    UnknownCommit(String),
    #[error("commit {commit} is a merge with {parents} parents")]
    MergeCommitRejected { commit: String, parents: usize },
    #[error("commit {0} changes nothing")]
    EmptyDiff(String),
    #[error("build failed:\n{prep_log}")]
    BuildFailed { prep_log: String },
    #[error("guest never answered the smoke test: {0}")]
    EnvBootFailed(String),
    #[error(transparent)]
    UnknownProfile(#[from] UnknownProfile),
    #[error("snapshot failed: {0}")]
    SnapshotFailed(String),
    #[error("environment file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("environment I/O: {0}")]
    Io(#[from] std::io::Error),
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, EnvPrepError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| EnvPrepError::Format { path: path.to_path_buf(), reason: e.to_string() })
}

/// Resolve `commit_id` in `repo` into a task at its first parent. Applying
/// `no_commit_message` drops the message here, before anything else sees it.
pub fn resolve_task(repo: &Path, commit_id: &str, ablations: &BTreeSet<ProfileId>) -> Result<PatchTask, EnvPrepError> {
    if commit_id.is_empty() || commit_id.starts_with('-') {
        return Err(EnvPrepError::UnknownCommit(commit_id.to_string()));
    }
    let spec = format!("{commit_id}^{{commit}}");
    let rev = git::run(repo, &["rev-parse", "--verify", "--quiet", &spec])?;
    if !rev.ok {
        return Err(EnvPrepError::UnknownCommit(commit_id.to_string()));
    }
    let commit = git::text(&rev).trim().to_string();
    let parents_out = git::run(repo, &["rev-list", "--parents", "-n", "1", &commit])?;
    let ids: Vec<String> = git::text(&parents_out).split_whitespace().skip(1).map(str::to_string).collect();
    let parent = match ids.len() {
        0 => return Err(EnvPrepError::UnknownCommit(format!("{commit} has no parent"))),
        1 => ids[0].clone(),
        n => return Err(EnvPrepError::MergeCommitRejected { commit, parents: n }),
    };
    let diff = git::run(repo, &["diff", "--no-ext-diff", "--no-textconv", "--binary", &parent, &commit])?;
    if !diff.ok {
        return Err(EnvPrepError::UnknownCommit(format!("{commit}: {}", diff.stderr)));
    }
    let diff_text = git::text(&diff);
    if diff_text.trim().is_empty() {
        return Err(EnvPrepError::EmptyDiff(commit));
    }
    let commit_message = if ablations.contains(&ProfileId::NoCommitMessage) {
        None
    } else {
        let log = git::run(repo, &["log", "-1", "--format=%B", &commit])?;
        Some(git::text(&log).trim_end().to_string())
    };
    Ok(PatchTask {
        case_id: commit[..12].to_string(),
        commit_id: commit,
        parent_commit_id: parent,
        diff_text,
        commit_message,
        subsystem_label: None,
        vuln_type: None,
        is_race: None,
        commit_msg_level: None,
        submit_time: None,
        ablations: ablations.clone(),
    })
}

/// Attach hand-labelled attributes to a task.
pub fn apply_metadata(task: &mut PatchTask, meta: &CaseMetadata) {
    task.case_id = meta.case_id.clone();
    task.subsystem_label = meta.subsystem.clone();
    task.is_race = meta.is_race;
    task.vuln_type = meta.vuln_type;
    task.commit_msg_level = meta.commit_msg_level;
    task.submit_time = meta.submit_time;
}

/// Digest of (commit, builder, enabled options).
pub fn content_digest(commit_id: &str, builder_id: &str, config_manifest: &[String]) -> String {
    let payload = serde_json::json!({
        "builder_id": builder_id,
        "commit_id": commit_id,
        "config_manifest": config_manifest,
    });
    sha256_hex(serde_json::to_vec(&payload).expect("json"))
}

struct PrepLog(String);

impl PrepLog {
    fn line(&mut self, s: impl fmt::Display) {
        self.0.push_str(&s.to_string());
        self.0.push('\n');
    }
}

/// Build the environment for `task` under `work_root/<env_id>`. Inputs fully
/// determine everything written except wall-clock timing.
pub fn prepare_environment(
    repo: &Path,
    task: &PatchTask,
    builder: &BuilderSpec,
    work_root: &Path,
) -> Result<ReproEnvironment, EnvPrepError> {
    let manifest = match builder.parameters.get("manifest") {
        Some(p) => read_json::<ConfigManifest>(Path::new(p))?,
        None => ConfigManifest::syzbot_like(),
    };
    manifest.validate().map_err(|e| EnvPrepError::BuildFailed { prep_log: format!("config manifest {}: {e}", manifest.name) })?;
    let digest = content_digest(&task.commit_id, &builder.builder_id, &manifest.enabled);
    let env_id = format!("env-{}", &digest[..16]);
    let env_dir = work_root.join(&env_id);
    if env_dir.exists() {
        fs::remove_dir_all(&env_dir)?;
    }
    fs::create_dir_all(&env_dir)?;
    let env_dir = fs::canonicalize(&env_dir)?;

    let mut log = PrepLog(String::new());
    log.line(format_args!("case {} commit {}", task.case_id, task.commit_id));
    log.line(format_args!("checkout parent {}", task.parent_commit_id));
    let source_root = env_dir.join(SOURCE_DIR);
    fs::create_dir_all(&source_root)?;
    git::export_tree(repo, &task.parent_commit_id, &source_root)
        .map_err(|e| EnvPrepError::BuildFailed { prep_log: format!("{}{e}\n", log.0) })?;
    log.line(format_args!("manifest {} ({} options)", manifest.name, manifest.enabled.len()));

    let (guest_image, toolchain_id) = match builder.kind {
        BuilderKind::Fixture => {
            let scenario = PathBuf::from(builder.param("scenario")?);
            let image = MockImage::from_scenario_file(&scenario)
                .map_err(|e| EnvPrepError::BuildFailed { prep_log: format!("{}{e}\n", log.0) })?;
            let path = env_dir.join("image.json");
            image.write(&path)?;
            log.line(format_args!("fixture image from scenario `{}`", image.scenario.name));
            (GuestImage { backend: BackendKind::Mock, path }, None)
        }
        BuilderKind::ExternalKernelBuild => {
            let out = env_dir.join("build");
            run_external_builder(builder, &source_root, &manifest, &out, &[], &mut log)?;
            let toolchain = builder.parameters.get("toolchain_id").cloned();
            (GuestImage { backend: BackendKind::ExternalHypervisor, path: out.join("hypervisor.json") }, toolchain)
        }
    };

    let snapshot_ref = boot_and_snapshot(&env_id, &guest_image, builder.smoke_deadline(), &env_dir.join("snapshot"), &mut log, true)?;
    let env = ReproEnvironment {
        env_id,
        env_dir: env_dir.clone(),
        source_root,
        guest_image,
        config_manifest: manifest.enabled.clone(),
        snapshot_ref,
        builder_id: builder.builder_id.clone(),
        toolchain_id,
        prep_log: log.0,
        content_digest: digest,
        profile: ProfileId::Baseline,
    };
    write_atomic(&env_dir.join(TASK_FILE), to_stable_json(task))?;
    write_atomic(&env_dir.join("builder.json"), to_stable_json(builder))?;
    env.persist()?;
    Ok(env)
}

fn run_external_builder(
    builder: &BuilderSpec,
    source_root: &Path,
    manifest: &ConfigManifest,
    out: &Path,
    remove: &[String],
    log: &mut PrepLog,
) -> Result<(), EnvPrepError> {
    let command = builder.param("command")?;
    fs::create_dir_all(out)?;
    let fragment = out.join("config.fragment");
    write_atomic(&fragment, manifest.fragment())?;
    let mut cmd = Command::new(command);
    cmd.arg("--source").arg(source_root).arg("--config").arg(&fragment).arg("--out").arg(out);
    if !remove.is_empty() {
        cmd.arg("--remove-utilities").arg(remove.join(","));
    }
    log.line(format_args!("run builder {command}"));
    let output = cmd.stdin(Stdio::null()).output();
    let output = match output {
        Ok(o) => o,
        Err(e) => {
            log.line(format_args!("cannot run {command}: {e}"));
            return Err(EnvPrepError::BuildFailed { prep_log: log.0.clone() });
        }
    };
    log.0.push_str(&String::from_utf8_lossy(&output.stdout));
    log.0.push_str(&String::from_utf8_lossy(&output.stderr));
    if !output.status.success() || !out.join("hypervisor.json").is_file() {
        log.line(format_args!("builder failed: {}", output.status));
        return Err(EnvPrepError::BuildFailed { prep_log: log.0.clone() });
    }
    Ok(())
}

fn boot_and_snapshot(
    guest_id: &str,
    image: &GuestImage,
    deadline: Duration,
    dir: &Path,
    log: &mut PrepLog,
    smoke: bool,
) -> Result<SnapshotRef, EnvPrepError> {
    let mut opts = GuestOptions::for_backend(image.backend);
    opts.ready_timeout = deadline;
    let handle = match GuestHandle::boot_cold(guest_id, image, Transcript::new(), opts) {
        Ok(h) => h,
        Err(e) if smoke => return Err(EnvPrepError::EnvBootFailed(e.to_string())),
        Err(e) => return Err(EnvPrepError::SnapshotFailed(e.to_string())),
    };
    if smoke {
        let out = handle
            .exec_console(&format!("echo {SMOKE_SENTINEL}"), Some(deadline))
            .map_err(|e| EnvPrepError::EnvBootFailed(e.to_string()))?;
        if out.timed_out || out.text.trim() != SMOKE_SENTINEL {
            return Err(EnvPrepError::EnvBootFailed(format!("smoke test answered {:?}", out.text)));
        }
        log.line("smoke test passed");
    }
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    let snap = handle.save_snapshot(dir).map_err(|e| EnvPrepError::SnapshotFailed(e.to_string()))?;
    handle.shutdown();
    log.line(format_args!("snapshot {}", snap.snapshot_id));
    Ok(snap)
}

/// Capture a fresh snapshot of `env`'s guest. Every restore from it starts
/// in the same observable state.
pub fn create_snapshot(env: &ReproEnvironment) -> Result<SnapshotRef, EnvPrepError> {
    let mut log = PrepLog(String::new());
    let deadline = match env.guest_image.backend {
        BackendKind::Mock => MOCK_SMOKE_DEADLINE,
        BackendKind::ExternalHypervisor => EXTERNAL_SMOKE_DEADLINE,
    };
    let dir = env.env_dir.join(format!("snapshot-{}", env.profile));
    boot_and_snapshot(&env.env_id, &env.guest_image, deadline, &dir, &mut log, false)
}

/// Apply a profile's guest-image transform. Profiles without one return
/// `env` unchanged; `no_utils` yields a new image and snapshot.
pub fn apply_capability_profile(env: &ReproEnvironment, profile: &CapabilityProfile) -> Result<ReproEnvironment, EnvPrepError> {
    let remove = match profile.image_transform() {
        ImageTransform::Identity => {
            let mut out = env.clone();
            out.profile = profile.id;
            return Ok(out);
        }
        ImageTransform::RemoveUtilities(names) => names,
    };
    let mut log = PrepLog(env.prep_log.clone());
    log.line(format_args!("profile {}: remove utilities {}", profile.id, remove.join(",")));
    let image = match env.guest_image.backend {
        BackendKind::Mock => {
            let mut img = MockImage::read(&env.guest_image.path)
                .map_err(|e| EnvPrepError::BuildFailed { prep_log: format!("{}{e}\n", log.0) })?;
            img.remove_utilities(&remove);
            let path = env.env_dir.join(format!("image.{}.json", profile.id));
            img.write(&path)?;
            GuestImage { backend: BackendKind::Mock, path }
        }
        BackendKind::ExternalHypervisor => {
            let builder: BuilderSpec = read_json(&env.env_dir.join("builder.json"))?;
            let manifest = ConfigManifest { enabled: env.config_manifest.clone(), ..ConfigManifest::syzbot_like() };
            let out = env.env_dir.join(format!("build.{}", profile.id));
            run_external_builder(&builder, &env.source_root, &manifest, &out, &remove, &mut log)?;
            GuestImage { backend: BackendKind::ExternalHypervisor, path: out.join("hypervisor.json") }
        }
    };
    let mut out = env.clone();
    out.guest_image = image;
    out.profile = profile.id;
    out.prep_log = log.0;
    out.snapshot_ref = create_snapshot(&out)?;
    write_atomic(
        &env.env_dir.join(format!("manifest.{}.json", profile.id)),
        to_stable_json(&out),
    )?;
    Ok(out)
}

/// `apply_capability_profile` by profile id string.
pub fn apply_profile_id(env: &ReproEnvironment, id: &str) -> Result<ReproEnvironment, EnvPrepError> {
    let profile = CapabilityProfile::from_id(id)?;
    apply_capability_profile(env, &profile)
}

/// Load the environment variant for `profile`, as written by
/// [`apply_capability_profile`].
pub fn load_for_profile(env_dir: &Path, profile: ProfileId) -> Result<ReproEnvironment, EnvPrepError> {
    let base = ReproEnvironment::load(env_dir)?;
    let variant = env_dir.join(format!("manifest.{profile}.json"));
    if variant.is_file() {
        return read_json(&variant);
    }
    apply_capability_profile(&base, &CapabilityProfile::new(profile))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_manifest_is_valid() {
        let m = ConfigManifest::syzbot_like();
        m.validate().unwrap();
        assert!(m.enabled.iter().any(|e| e == "CONFIG_KASAN=y"));
        assert!(!m.enabled.iter().any(|e| e.starts_with("CONFIG_KPROBES")));
    }

    #[test]
    fn manifest_rejects_probes() {
        let mut m = ConfigManifest::syzbot_like();
        m.enabled.push("CONFIG_KPROBES=y".into());
        assert!(m.validate().unwrap_err().contains("KPROBES"));
    }

    #[test]
    fn digest_depends_on_every_input() {
        let base = content_digest("a", "b", &["X=y".into()]);
        assert_eq!(base, content_digest("a", "b", &["X=y".into()]));
        assert_ne!(base, content_digest("c", "b", &["X=y".into()]));
        assert_ne!(base, content_digest("a", "c", &["X=y".into()]));
        assert_ne!(base, content_digest("a", "b", &["X=n".into()]));
    }

    #[test]
    fn message_levels_serialize_as_numbers() {
        assert_eq!(serde_json::to_string(&CommitMsgLevel::L2).unwrap(), "2");
        assert!(serde_json::from_str::<CommitMsgLevel>("4").is_err());
    }
}
