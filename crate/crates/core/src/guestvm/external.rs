//! External hypervisor backend: a subprocess whose stdio is the guest's
//! serial console.
//!
//! All hypervisor arguments live in one JSON config. Argument strings may
//! use `{dir}` (the config file's directory) and `{tag}` (the snapshot tag
//! when restoring). With a monitor socket, snapshots are taken with
//! `savevm` and restored by appending `restore_args`; without one, a
//! restore is a cold boot.

use std::collections::BTreeMap;
use std::io::{BufReader, Read, Write};
use std::os::unix::net::UnixStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{BackendKind, GuestError, Instance, SnapshotRef};
use crate::kdbg::StubConnection;
use crate::util::{sha256_hex, to_stable_json, write_atomic};

const SNAPSHOT_TAG: &str = "repro-ready";

fn default_ready_pattern() -> String {
    r"[#$] ?$".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GdbConfig {
    #[serde(default = "default_gdb")]
    pub program: String,
    #[serde(default = "default_gdb_args")]
    pub args: Vec<String>,
    /// remote target, e.g. `localhost:1234`
    pub target: String,
}

fn default_gdb() -> String {
    "gdb".into()
}

fn default_gdb_args() -> Vec<String> {
    vec!["-q".into(), "-nx".into(), "-i=mi".into()]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypervisorConfig {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    /// appended to `args` when restoring from a memory snapshot
    #[serde(default)]
    pub restore_args: Vec<String>,
    /// unix socket of the hypervisor's human monitor
    #[serde(default)]
    pub monitor_socket: Option<String>,
    /// regex over the console text signalling a usable shell after boot
    #[serde(default = "default_ready_pattern")]
    pub ready_pattern: String,
    #[serde(default)]
    pub gdb: Option<GdbConfig>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SnapshotFile {
    config: PathBuf,
    tag: Option<String>,
}

pub(crate) struct ExternalInstance {
    child: Child,
    cfg: HypervisorConfig,
    cfg_dir: PathBuf,
    config_path: PathBuf,
    warm: bool,
}

struct KillOnDrop(Child);

impl Drop for KillOnDrop {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn substitute(arg: &str, dir: &Path, tag: Option<&str>) -> String {
    arg.replace("{dir}", &dir.to_string_lossy()).replace("{tag}", tag.unwrap_or(""))
}

fn read_config(path: &Path) -> Result<(HypervisorConfig, PathBuf), GuestError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GuestError::BackendUnavailable(format!("{}: {e}", path.display())))?;
    let cfg: HypervisorConfig = serde_json::from_str(&text)
        .map_err(|e| GuestError::BackendUnavailable(format!("{}: {e}", path.display())))?;
    Regex::new(&cfg.ready_pattern).map_err(|e| GuestError::BackendUnavailable(format!("ready_pattern: {e}")))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    Ok((cfg, dir))
}

impl ExternalInstance {
    fn spawn(config_path: &Path, tag: Option<&str>) -> Result<Self, GuestError> {
        let (cfg, cfg_dir) = read_config(config_path)?;
        let mut args: Vec<String> = cfg.args.iter().map(|a| substitute(a, &cfg_dir, tag)).collect();
        if tag.is_some() {
            args.extend(cfg.restore_args.iter().map(|a| substitute(a, &cfg_dir, tag)));
        }
        let child = Command::new(substitute(&cfg.program, &cfg_dir, tag))
            .args(&args)
            .envs(&cfg.env)
            .current_dir(&cfg_dir)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| GuestError::BackendUnavailable(format!("cannot launch {}: {e}", cfg.program)))?;
        Ok(Self { child, cfg, cfg_dir, config_path: config_path.to_path_buf(), warm: tag.is_some() })
    }

    pub fn cold_boot(config_path: &Path) -> Result<Self, GuestError> {
        Self::spawn(config_path, None)
    }

    pub fn restore(snapshot_path: &Path) -> Result<Self, GuestError> {
        let text = std::fs::read_to_string(snapshot_path)
            .map_err(|e| GuestError::RestoreFailed(format!("{}: {e}", snapshot_path.display())))?;
        let snap: SnapshotFile =
            serde_json::from_str(&text).map_err(|e| GuestError::RestoreFailed(format!("snapshot file: {e}")))?;
        Self::spawn(&snap.config, snap.tag.as_deref())
    }

    fn monitor_command(&self, socket: &str, command: &str) -> Result<String, GuestError> {
        let path = substitute(socket, &self.cfg_dir, None);
        let mut stream = UnixStream::connect(&path)
            .map_err(|e| GuestError::SnapshotFailed(format!("monitor {path}: {e}")))?;
        stream.set_read_timeout(Some(Duration::from_secs(600)))?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut out = String::new();
        let mut read_to_prompt = |out: &mut String| -> Result<(), GuestError> {
            let mut buf = Vec::new();
            loop {
                let mut byte = [0u8; 1];
                match reader.read(&mut byte) {
                    Ok(0) => return Err(GuestError::SnapshotFailed("monitor closed".into())),
                    Ok(_) => buf.push(byte[0]),
                    Err(e) => return Err(GuestError::SnapshotFailed(format!("monitor: {e}"))),
                }
                if buf.ends_with(b"(qemu) ") {
                    out.push_str(&String::from_utf8_lossy(&buf));
                    return Ok(());
                }
            }
        };
        let mut banner = String::new();
        read_to_prompt(&mut banner)?;
        writeln!(stream, "{command}")?;
        read_to_prompt(&mut out)?;
        Ok(out)
    }
}

impl Instance for ExternalInstance {
    fn take_console(&mut self) -> Option<(Box<dyn Read + Send>, Box<dyn Write + Send>)> {
        let out = self.child.stdout.take()?;
        let inp = self.child.stdin.take()?;
        Some((Box::new(out), Box::new(inp)))
    }

    fn warm(&self) -> bool {
        self.warm
    }

    fn ready_pattern(&self) -> Regex {
        Regex::new(&self.cfg.ready_pattern).expect("validated at load")
    }

    fn state_digest(&self) -> Option<String> {
        None
    }

    fn connect_stub(&self) -> Result<StubConnection, GuestError> {
        let gdb = self.cfg.gdb.as_ref().ok_or_else(|| GuestError::BackendUnavailable("no debugger configured".into()))?;
        let mut child = Command::new(&gdb.program)
            .args(gdb.args.iter().map(|a| substitute(a, &self.cfg_dir, None)))
            .current_dir(&self.cfg_dir)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| GuestError::BackendUnavailable(format!("cannot launch {}: {e}", gdb.program)))?;
        let mut stdin = child.stdin.take().expect("piped");
        let stdout = child.stdout.take().expect("piped");
        // the stub halts the guest on connect; continue so the gate opens
        writeln!(stdin, "-target-select remote {}", gdb.target)?;
        writeln!(stdin, "-exec-continue")?;
        stdin.flush()?;
        Ok(StubConnection {
            reader: Box::new(stdout),
            writer: Box::new(stdin),
            keepalive: Some(Box::new(KillOnDrop(child))),
        })
    }

    fn install_binary(&self, _dest: &str, _bytes: &[u8]) -> Option<Result<(), GuestError>> {
        None
    }

    fn save_snapshot(&mut self, dir: &Path) -> Result<SnapshotRef, GuestError> {
        let tag = match &self.cfg.monitor_socket {
            Some(socket) => {
                let out = self.monitor_command(socket, &format!("savevm {SNAPSHOT_TAG}"))?;
                if out.to_lowercase().contains("error") {
                    return Err(GuestError::SnapshotFailed(out.trim().to_string()));
                }
                Some(SNAPSHOT_TAG.to_string())
            }
            None => None,
        };
        let config = std::fs::canonicalize(&self.config_path)?;
        let file = SnapshotFile { config: config.clone(), tag: tag.clone() };
        let path = dir.join("snapshot.json");
        write_atomic(&path, to_stable_json(&file))?;
        let cfg_digest = sha256_hex(std::fs::read(&config)?);
        Ok(SnapshotRef {
            snapshot_id: format!("ext-{}-{}", tag.as_deref().unwrap_or("cold"), &cfg_digest[..12]),
            backend: BackendKind::ExternalHypervisor,
            path,
            initial_digest: None,
        })
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ExternalInstance {
    fn drop(&mut self) {
        self.kill();
    }
}
