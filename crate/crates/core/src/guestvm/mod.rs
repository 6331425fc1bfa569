//! Guest lifecycle, console interaction, control signals and PoC upload.
//!
//! A [`GuestHandle`] owns one guest instance behind a backend (scripted mock
//! or external hypervisor), one console channel and the [`DebugGate`] shared
//! with the debugger bridge. All guest-mutating operations on a handle are
//! serialized by one lock; the console drain runs concurrently.

mod compile;
mod console;
mod external;
mod mock;
mod transcript;

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine;
use regex::Regex;
use serde::{Deserialize, Serialize};

pub use compile::{compile_c, CompiledBinary, CompilerConfig};
pub use console::{is_kernel_line, PROMPT_SENTINEL, PS1_SETUP, SEVERITY_TOKENS};
pub use external::{GdbConfig, HypervisorConfig};
pub use mock::{
    CommandRule, CrashEmission, DebuggerEffect, DebuggerFixture, FlagPost, GuestScenario, MemoryRegion, MockImage,
    PostState, RegisterFixture, ScenarioError, SymbolFixture, DEFAULT_UTILITIES,
};
pub use transcript::{LineOrigin, Transcript, TranscriptLine};

use crate::kdbg::{DebugGate, StubConnection};
use crate::util::sha256_hex;
use console::{clean_output, ConsoleChannel, WaitEnd};

pub const DEFAULT_EXEC_TIMEOUT: Duration = Duration::from_secs(30);
const SIGNAL_WAIT: Duration = Duration::from_secs(5);
/// How long a resume waits for the interrupted command to finish.
pub const RESUME_SETTLE: Duration = Duration::from_secs(10);
const UPLOAD_MARKER: &str = "__REPRO_UPLOAD_OK__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    ExternalHypervisor,
}

/// A bootable guest image: a mock image file or a hypervisor config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuestImage {
    pub backend: BackendKind,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRef {
    pub snapshot_id: String,
    pub backend: BackendKind,
    pub path: PathBuf,
    /// state digest every restore must reproduce, when the backend can
    /// compute it ahead of a restore
    pub initial_digest: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuestState {
    Running,
    Unresponsive,
    Dead,
}

impl fmt::Display for GuestState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GuestState::Running => "running",
            GuestState::Unresponsive => "unresponsive",
            GuestState::Dead => "dead",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    /// Ctrl-C: SIGINT to the foreground program
    Interrupt,
    /// Ctrl-\: SIGQUIT to the foreground program
    Break,
}

impl std::str::FromStr for Signal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "interrupt" => Ok(Signal::Interrupt),
            "break" => Ok(Signal::Break),
            other => Err(format!("unknown signal `{other}` (expected interrupt or break)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsoleOutput {
    pub text: String,
    pub duration_ms: u64,
    pub timed_out: bool,
    pub kernel_lines: Vec<String>,
    /// the debugger stopped the guest before the command finished
    pub halted_by_debugger: bool,
    pub guest_state: GuestState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalAck {
    pub signal: Signal,
    pub prompt_regained: bool,
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConsoleMark {
    raw: usize,
    line: usize,
}

/// Console output produced after a resume, up to the point the guest
/// settled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResumeOutput {
    /// the interrupted command ran to its prompt
    pub completed: bool,
    pub halted_again: bool,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadResult {
    pub guest_path: String,
    pub binary_size: u64,
    pub compile_log: String,
    pub compiler_id: String,
    pub target_triple: String,
}

#[derive(Debug, thiserror::Error)]
pub enum GuestError {
    #[error("guest backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("snapshot restore failed: {0}")]
    RestoreFailed(String),
    #[error("guest did not reach the ready prompt: {0}")]
    BootTimeout(String),
    #[error("snapshot failed: {0}")]
    SnapshotFailed(String),
    #[error("guest is {0}")]
    GuestUnavailable(GuestState),
    #[error("debuggee is halted at a breakpoint; resume it before interacting with the guest")]
    DebuggeeHalted,
    #[error("compilation failed:\n{diagnostics}")]
    CompileFailed { diagnostics: String },
    #[error("upload failed: {0}")]
    UploadFailed(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("guest I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct GuestOptions {
    /// deadline for a restore or cold boot to present its prompt
    pub ready_timeout: Duration,
    /// quiet period after a crash banner, without a prompt, after which the
    /// guest is considered unresponsive
    pub crash_settle: Duration,
    pub compiler: CompilerConfig,
    pub upload_timeout: Duration,
}

impl GuestOptions {
    pub fn for_backend(kind: BackendKind) -> Self {
        match kind {
            BackendKind::Mock => Self {
                ready_timeout: Duration::from_secs(5),
                crash_settle: Duration::from_millis(500),
                compiler: CompilerConfig::default(),
                upload_timeout: Duration::from_secs(30),
            },
            BackendKind::ExternalHypervisor => Self {
                ready_timeout: Duration::from_secs(120),
                crash_settle: Duration::from_secs(3),
                compiler: CompilerConfig::default(),
                upload_timeout: Duration::from_secs(600),
            },
        }
    }
}

/// What the handle needs from a running backend instance.
pub(crate) trait Instance: Send {
    fn take_console(&mut self) -> Option<(Box<dyn Read + Send>, Box<dyn Write + Send>)>;
    /// Restored from a memory snapshot (a newline yields a sentinel prompt)
    /// rather than cold booted.
    fn warm(&self) -> bool;
    fn ready_pattern(&self) -> Regex;
    fn state_digest(&self) -> Option<String>;
    fn connect_stub(&self) -> Result<StubConnection, GuestError>;
    /// `None` when the backend has no side channel and the console must be
    /// used.
    fn install_binary(&self, dest: &str, bytes: &[u8]) -> Option<Result<(), GuestError>>;
    fn save_snapshot(&mut self, dir: &Path) -> Result<SnapshotRef, GuestError>;
    fn kill(&mut self);
}

/// Per-instance context handed to backends.
#[derive(Clone)]
pub(crate) struct GuestContext {
    pub transcript: Transcript,
    pub gate: DebugGate,
}

struct Live {
    instance: Box<dyn Instance>,
    console: ConsoleChannel,
    initial_digest: String,
}

/// Releases the single-debugger claim on drop.
#[derive(Debug)]
pub struct StubClaim {
    flag: Arc<AtomicBool>,
}

impl Drop for StubClaim {
    fn drop(&mut self) {
        self.flag.store(false, Ordering::SeqCst);
    }
}

pub struct GuestHandle {
    guest_id: String,
    backend: BackendKind,
    snapshot: Option<SnapshotRef>,
    transcript: Transcript,
    gate: DebugGate,
    opts: GuestOptions,
    live: Mutex<Option<Live>>,
    state: Mutex<GuestState>,
    stub_claimed: Arc<AtomicBool>,
    poc_iterations: AtomicU64,
    restarts: AtomicU64,
    backend_alive: AtomicBool,
}

impl fmt::Debug for GuestHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GuestHandle")
            .field("guest_id", &self.guest_id)
            .field("backend", &self.backend)
            .field("state", &self.state())
            .finish_non_exhaustive()
    }
}

fn spawn_instance(image_or_snapshot: &Path, backend: BackendKind, restore: bool, ctx: &GuestContext) -> Result<Box<dyn Instance>, GuestError> {
    Ok(match (backend, restore) {
        (BackendKind::Mock, true) => Box::new(mock::MockInstance::restore(image_or_snapshot, ctx)?),
        (BackendKind::Mock, false) => Box::new(mock::MockInstance::cold_boot(image_or_snapshot, ctx)?),
        (BackendKind::ExternalHypervisor, true) => Box::new(external::ExternalInstance::restore(image_or_snapshot)?),
        (BackendKind::ExternalHypervisor, false) => Box::new(external::ExternalInstance::cold_boot(image_or_snapshot)?),
    })
}

/// Wait for the backend's ready pattern, then install the sentinel prompt.
fn bring_up(console: &ConsoleChannel, ready: &Regex, deadline: Instant) -> Result<(), String> {
    let remaining = deadline.saturating_duration_since(Instant::now());
    if !console.wait_for_pattern(ready, remaining) {
        return Err("no ready prompt before the deadline".into());
    }
    console.sync_expected();
    let r = console.run(PS1_SETUP, deadline, &|| false, None).map_err(|e| e.to_string())?;
    if r.end != WaitEnd::Prompt {
        return Err("sentinel prompt not confirmed".into());
    }
    Ok(())
}

fn launch(snapshot: &SnapshotRef, ctx: &GuestContext, opts: &GuestOptions) -> Result<Live, GuestError> {
    let mut instance =
        spawn_instance(&snapshot.path, snapshot.backend, true, ctx).map_err(|e| GuestError::RestoreFailed(e.to_string()))?;
    let (r, w) = instance.take_console().ok_or_else(|| GuestError::RestoreFailed("backend exposes no console".into()))?;
    let console = ConsoleChannel::open(r, w, ctx.transcript.clone());
    let deadline = Instant::now() + opts.ready_timeout;
    let ready = if instance.warm() {
        match console.run("", deadline, &|| false, None) {
            Ok(r) if r.end == WaitEnd::Prompt => Ok(()),
            Ok(_) => Err("restored guest did not present the sentinel prompt".to_string()),
            Err(e) => Err(e.to_string()),
        }
    } else {
        bring_up(&console, &instance.ready_pattern(), deadline)
    };
    if let Err(msg) = ready {
        instance.kill();
        console.close(Duration::from_millis(200));
        return Err(GuestError::RestoreFailed(msg));
    }
    let initial_digest = instance.state_digest().unwrap_or_else(|| sha256_hex(console.raw_text()));
    if let Some(expected) = &snapshot.initial_digest {
        if *expected != initial_digest {
            log::warn!("restored digest {initial_digest} differs from snapshot digest {expected}");
        }
    }
    Ok(Live { instance, console, initial_digest })
}

fn valid_guest_path(dest: &str) -> bool {
    dest.starts_with('/')
        && dest.len() > 1
        && !dest.ends_with('/')
        && dest.chars().all(|c| c.is_ascii_alphanumeric() || "/._-+".contains(c))
        && !dest.split('/').any(|seg| seg == "..")
}

impl GuestHandle {
    fn new_handle(
        guest_id: String,
        backend: BackendKind,
        snapshot: Option<SnapshotRef>,
        ctx: GuestContext,
        opts: GuestOptions,
        live: Live,
    ) -> Self {
        Self {
            guest_id,
            backend,
            snapshot,
            transcript: ctx.transcript,
            gate: ctx.gate,
            opts,
            live: Mutex::new(Some(live)),
            state: Mutex::new(GuestState::Running),
            stub_claimed: Arc::new(AtomicBool::new(false)),
            poc_iterations: AtomicU64::new(0),
            restarts: AtomicU64::new(0),
            backend_alive: AtomicBool::new(true),
        }
    }

    /// Restore a guest from `snapshot`. The transcript begins with a start
    /// marker line.
    pub fn start(
        guest_id: &str,
        snapshot: &SnapshotRef,
        transcript: Transcript,
        opts: GuestOptions,
    ) -> Result<Self, GuestError> {
        if !snapshot.path.exists() {
            return Err(GuestError::RestoreFailed(format!("snapshot {} not found", snapshot.path.display())));
        }
        let ctx = GuestContext { gate: DebugGate::new(transcript.clone()), transcript };
        ctx.transcript.push_harness(format!("start guest {guest_id} from snapshot {}", snapshot.snapshot_id));
        let live = launch(snapshot, &ctx, &opts)?;
        Ok(Self::new_handle(guest_id.to_string(), snapshot.backend, Some(snapshot.clone()), ctx, opts, live))
    }

    /// Boot an image from scratch and install the sentinel prompt. Used to
    /// smoke-test images and to capture snapshots.
    pub fn boot_cold(
        guest_id: &str,
        image: &GuestImage,
        transcript: Transcript,
        opts: GuestOptions,
    ) -> Result<Self, GuestError> {
        let ctx = GuestContext { gate: DebugGate::new(transcript.clone()), transcript };
        ctx.transcript.push_harness(format!("cold boot of guest {guest_id}"));
        let mut instance = spawn_instance(&image.path, image.backend, false, &ctx)?;
        let (r, w) = instance.take_console().ok_or_else(|| GuestError::BackendUnavailable("no console".into()))?;
        let console = ConsoleChannel::open(r, w, ctx.transcript.clone());
        if let Err(msg) = bring_up(&console, &instance.ready_pattern(), Instant::now() + opts.ready_timeout) {
            instance.kill();
            console.close(Duration::from_millis(200));
            return Err(GuestError::BootTimeout(msg));
        }
        let initial_digest = instance.state_digest().unwrap_or_else(|| sha256_hex(console.raw_text()));
        let live = Live { instance, console, initial_digest };
        Ok(Self::new_handle(guest_id.to_string(), image.backend, None, ctx, opts, live))
    }

    pub fn guest_id(&self) -> &str {
        &self.guest_id
    }

    pub fn backend(&self) -> BackendKind {
        self.backend
    }

    pub fn snapshot(&self) -> Option<&SnapshotRef> {
        self.snapshot.as_ref()
    }

    pub fn state(&self) -> GuestState {
        *self.state.lock().unwrap()
    }

    pub fn gate(&self) -> DebugGate {
        self.gate.clone()
    }

    pub fn transcript(&self) -> Transcript {
        self.transcript.clone()
    }

    /// Digest of the guest state observed right after the latest restore.
    pub fn initial_digest(&self) -> Option<String> {
        self.live.lock().unwrap().as_ref().map(|l| l.initial_digest.clone())
    }

    /// Digest of the current guest state; only backends that model their
    /// state (the mock) can report it.
    pub fn current_digest(&self) -> Option<String> {
        self.live.lock().unwrap().as_ref().and_then(|l| l.instance.state_digest())
    }

    pub fn poc_iterations(&self) -> u64 {
        self.poc_iterations.load(Ordering::SeqCst)
    }

    pub fn restart_count(&self) -> u64 {
        self.restarts.load(Ordering::SeqCst)
    }

    fn set_state(&self, next: GuestState) {
        let mut s = self.state.lock().unwrap();
        if *s != next {
            log::debug!("guest {} state {} -> {}", self.guest_id, *s, next);
            *s = next;
        }
    }

    fn check_interactive(&self) -> Result<(), GuestError> {
        let state = self.state();
        if state != GuestState::Running {
            return Err(GuestError::GuestUnavailable(state));
        }
        if self.gate.is_stopped() {
            return Err(GuestError::DebuggeeHalted);
        }
        Ok(())
    }

    /// Claim the single debugger slot for this guest.
    pub fn try_claim_stub(&self) -> Option<StubClaim> {
        self.stub_claimed
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .ok()
            .map(|_| StubClaim { flag: self.stub_claimed.clone() })
    }

    pub fn connect_debug_stub(&self) -> Result<StubConnection, GuestError> {
        let live = self.live.lock().unwrap();
        let live = live.as_ref().ok_or(GuestError::GuestUnavailable(GuestState::Dead))?;
        live.instance.connect_stub()
    }

    /// Discard the current guest and restore a fresh one from the same
    /// snapshot. The transcript continues with a restart marker.
    pub fn restart(&self) -> Result<(), GuestError> {
        let mut live = self.live.lock().unwrap();
        if let Some(mut old) = live.take() {
            old.instance.kill();
            old.console.close(Duration::from_secs(1));
        }
        self.gate.on_running();
        let fail = |msg: String| {
            self.set_state(GuestState::Dead);
            GuestError::RestoreFailed(msg)
        };
        if !self.backend_alive.load(Ordering::SeqCst) {
            return Err(fail("backend is not running".into()));
        }
        let snapshot = self.snapshot.clone().ok_or_else(|| fail("guest was not started from a snapshot".into()))?;
        let n = self.restarts.fetch_add(1, Ordering::SeqCst) + 1;
        self.transcript.push_harness(format!("restart #{n} of guest {} from snapshot {}", self.guest_id, snapshot.snapshot_id));
        let ctx = GuestContext { transcript: self.transcript.clone(), gate: self.gate.clone() };
        match launch(&snapshot, &ctx, &self.opts) {
            Ok(new) => {
                *live = Some(new);
                self.set_state(GuestState::Running);
                Ok(())
            }
            Err(e) => Err(fail(e.to_string())),
        }
    }

    /// Write one command line and collect output until the sentinel prompt,
    /// a timeout, a debugger stop, or a crash that leaves no prompt.
    pub fn exec_console(&self, command: &str, timeout: Option<Duration>) -> Result<ConsoleOutput, GuestError> {
        if command.contains(['\n', '\r']) {
            return Err(GuestError::InvalidRequest("command must be a single line".into()));
        }
        let live = self.live.lock().unwrap();
        self.check_interactive()?;
        let live = live.as_ref().ok_or(GuestError::GuestUnavailable(GuestState::Dead))?;
        let timeout = timeout.unwrap_or(DEFAULT_EXEC_TIMEOUT);
        let started = Instant::now();
        let gate = self.gate.clone();
        let r = match live.console.run(command, started + timeout, &|| gate.is_stopped(), Some(self.opts.crash_settle)) {
            Ok(r) => r,
            Err(e) => {
                self.set_state(GuestState::Dead);
                return Err(GuestError::Io(e));
            }
        };
        match r.end {
            WaitEnd::Eof => self.set_state(GuestState::Dead),
            WaitEnd::CrashSettled => self.set_state(GuestState::Unresponsive),
            _ => {}
        }
        let text = clean_output(&r.text, command);
        let kernel_lines = text.lines().filter(|l| is_kernel_line(l)).map(str::to_string).collect();
        Ok(ConsoleOutput {
            text,
            duration_ms: started.elapsed().as_millis() as u64,
            timed_out: r.end == WaitEnd::TimedOut,
            kernel_lines,
            halted_by_debugger: r.end == WaitEnd::Halted,
            guest_state: self.state(),
        })
    }

    /// Console position to pass to [`GuestHandle::settle_after_resume`].
    /// Taken before the debugger continues, so no output is missed.
    pub fn console_mark(&self) -> ConsoleMark {
        let live = self.live.lock().unwrap();
        let raw = live.as_ref().map_or(0, |l| l.console.raw_text().len());
        ConsoleMark { raw, line: self.transcript.len() }
    }

    /// After the debugger resumed the kernel, wait until every command cut
    /// short by the stop has printed its prompt, the kernel stops again, a
    /// crash settles, or `timeout`. Output arriving later stays in the
    /// transcript for the next call.
    pub fn settle_after_resume(&self, mark: ConsoleMark, timeout: Duration) -> Result<ResumeOutput, GuestError> {
        let live = self.live.lock().unwrap();
        let live = live.as_ref().ok_or(GuestError::GuestUnavailable(GuestState::Dead))?;
        let console = &live.console;
        let owed = console.owed_prompts();
        let end = if owed == 0 {
            WaitEnd::Prompt
        } else {
            let gate = self.gate.clone();
            let target = console.prompts_seen() + owed;
            console.wait_until(target, Instant::now() + timeout, &|| gate.is_stopped(), Some(self.opts.crash_settle), mark.line)
        };
        match end {
            WaitEnd::Eof => self.set_state(GuestState::Dead),
            WaitEnd::CrashSettled => self.set_state(GuestState::Unresponsive),
            _ => {}
        }
        let raw = console.raw_text();
        Ok(ResumeOutput {
            completed: end == WaitEnd::Prompt,
            halted_again: end == WaitEnd::Halted,
            output: clean_output(raw.get(mark.raw..).unwrap_or(""), ""),
        })
    }

    pub fn send_signal(&self, signal: Signal) -> Result<SignalAck, GuestError> {
        let live = self.live.lock().unwrap();
        self.check_interactive()?;
        let live = live.as_ref().ok_or(GuestError::GuestUnavailable(GuestState::Dead))?;
        let console = &live.console;
        let before = console.raw_text().len();
        let mark = self.transcript.len();
        let busy = console.owed_prompts() > 0;
        let byte = match signal {
            Signal::Interrupt => 0x03u8,
            Signal::Break => 0x1c,
        };
        console.write_bytes(&[byte])?;
        let gate = self.gate.clone();
        let prompt_regained = if busy || signal == Signal::Interrupt {
            // an idle shell answers Ctrl-C with a fresh prompt
            let target = if busy { console.prompts_seen() + console.owed_prompts() } else { console.expect_prompt() };
            let end = console.wait_until(target, Instant::now() + SIGNAL_WAIT, &|| gate.is_stopped(), None, mark);
            end == WaitEnd::Prompt
        } else {
            true
        };
        let raw = console.raw_text();
        let output = clean_output(raw.get(before..).unwrap_or(""), "");
        Ok(SignalAck { signal, prompt_regained, output })
    }

    /// Compile C source on the host and place the binary at `dest` in the
    /// guest. Every call past the gate check counts as a PoC iteration.
    pub fn compile_and_upload(&self, source: &str, dest: &str) -> Result<UploadResult, GuestError> {
        let live = self.live.lock().unwrap();
        if self.gate.is_stopped() {
            return Err(GuestError::DebuggeeHalted);
        }
        self.poc_iterations.fetch_add(1, Ordering::SeqCst);
        let state = self.state();
        if state != GuestState::Running {
            return Err(GuestError::UploadFailed(format!("guest is {state}")));
        }
        let live = live.as_ref().ok_or(GuestError::UploadFailed("guest is dead".into()))?;
        if !valid_guest_path(dest) {
            return Err(GuestError::UploadFailed(format!("`{dest}` is not an absolute guest file path")));
        }
        let bin = compile_c(source, &self.opts.compiler)?;
        match live.instance.install_binary(dest, &bin.bytes) {
            Some(r) => r?,
            None => self.upload_via_console(&live.console, &bin.bytes, dest)?,
        }
        Ok(UploadResult {
            guest_path: dest.to_string(),
            binary_size: bin.bytes.len() as u64,
            compile_log: bin.log,
            compiler_id: bin.compiler_id,
            target_triple: bin.target_triple,
        })
    }

    fn upload_via_console(&self, console: &ConsoleChannel, bytes: &[u8], dest: &str) -> Result<(), GuestError> {
        let deadline = Instant::now() + self.opts.upload_timeout;
        let gate = self.gate.clone();
        let halted = || gate.is_stopped();
        let tmp = format!("{dest}.part");
        let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
        let mut payload = format!("base64 -d > '{tmp}' << '__REPRO_EOF__'\n");
        for chunk in encoded.as_bytes().chunks(76) {
            payload.push_str(std::str::from_utf8(chunk).expect("base64 is ascii"));
            payload.push('\n');
        }
        payload.push_str("__REPRO_EOF__");
        let r = console.run(&payload, deadline, &halted, None)?;
        if r.end != WaitEnd::Prompt {
            return Err(GuestError::UploadFailed(format!("transfer did not complete ({:?})", r.end)));
        }
        let finish = format!("chmod 755 '{tmp}' && mv '{tmp}' '{dest}' && echo {UPLOAD_MARKER}");
        let r = console.run(&finish, deadline, &halted, None)?;
        let out = clean_output(&r.text, &finish);
        if r.end == WaitEnd::Prompt && out.lines().any(|l| l.trim() == UPLOAD_MARKER) {
            Ok(())
        } else {
            Err(GuestError::UploadFailed(format!("guest did not confirm the upload: {}", out.trim())))
        }
    }

    /// Capture the running guest as a snapshot under `dir`.
    pub fn save_snapshot(&self, dir: &Path) -> Result<SnapshotRef, GuestError> {
        let mut live = self.live.lock().unwrap();
        if self.state() != GuestState::Running {
            return Err(GuestError::SnapshotFailed(format!("guest is {}", self.state())));
        }
        let live = live.as_mut().ok_or_else(|| GuestError::SnapshotFailed("guest is dead".into()))?;
        std::fs::create_dir_all(dir)?;
        live.instance.save_snapshot(dir)
    }

    /// Kill the guest and its backend so that later restores fail; models
    /// a hypervisor that died underneath the harness.
    pub fn kill_backend(&self) {
        self.backend_alive.store(false, Ordering::SeqCst);
        let mut live = self.live.lock().unwrap();
        if let Some(mut l) = live.take() {
            l.instance.kill();
            l.console.close(Duration::from_secs(1));
        }
        self.set_state(GuestState::Dead);
    }

    /// Stop the guest and flush the console into the transcript.
    pub fn shutdown(&self) {
        let mut live = self.live.lock().unwrap();
        if let Some(mut l) = live.take() {
            l.instance.kill();
            l.console.close(Duration::from_secs(1));
        }
        self.set_state(GuestState::Dead);
    }
}

impl Drop for GuestHandle {
    fn drop(&mut self) {
        if let Ok(mut live) = self.live.lock() {
            if let Some(mut l) = live.take() {
                l.instance.kill();
                l.console.close(Duration::from_millis(200));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guest_paths() {
        assert!(valid_guest_path("/root/poc"));
        assert!(valid_guest_path("/tmp/a-b_c.1"));
        assert!(!valid_guest_path("poc"));
        assert!(!valid_guest_path("/root/"));
        assert!(!valid_guest_path("/root/../etc/x"));
        assert!(!valid_guest_path("/root/p oc"));
        assert!(!valid_guest_path("/root/p'oc"));
    }

    #[test]
    fn signal_names() {
        assert_eq!("interrupt".parse::<Signal>(), Ok(Signal::Interrupt));
        assert_eq!("break".parse::<Signal>(), Ok(Signal::Break));
        assert!("kill".parse::<Signal>().is_err());
    }
}
