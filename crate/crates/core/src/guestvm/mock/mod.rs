//! Scripted stand-in for a kernel guest: a small shell over an in-memory
//! file map, ordered command rules that print canned output or crash
//! reports, and an MI responder playing the kernel's debugger stub.
//!
//! Everything observable is a function of the command sequence, so equal
//! inputs yield equal transcripts. Console output and MI async records are
//! ordered through the transcript byte counter: before a stop or resume
//! record is written, all console bytes written so far have been drained.

mod scenario;
mod shell;
mod stub;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::io::{PipeReader, PipeWriter, Read, Write};
use std::path::Path;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

pub use scenario::{
    CommandRule, CrashEmission, DebuggerEffect, DebuggerFixture, FlagPost, GuestScenario, MemoryRegion, MockImage,
    PostState, RegisterFixture, ScenarioError, SymbolFixture, DEFAULT_UTILITIES,
};

use super::{BackendKind, GuestContext, GuestError, Instance, SnapshotRef, Transcript};
use crate::kdbg::{DebugGate, StubConnection};
use crate::util::{sha256_hex, to_stable_json, write_atomic};
use shell::{extract_redirect, split_list, split_pipeline, Connector};

/// Upper bound on waits used to order console bytes against MI records.
const BARRIER: Duration = Duration::from_secs(2);
const DEFAULT_PS1: &str = "# ";
const HOME: &str = "/root";
const PATH_DIRS: &[&str] = &["/usr/local/sbin", "/usr/local/bin", "/usr/sbin", "/usr/bin", "/sbin", "/bin"];

pub(super) fn parse_address(s: &str) -> Option<u64> {
    let s = s.trim();
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(h) => u64::from_str_radix(h, 16).ok(),
        None => s.parse().ok(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct FileNode {
    content: String,
    /// digest of uploaded binary content
    #[serde(default, skip_serializing_if = "Option::is_none")]
    binary_sha256: Option<String>,
    size: u64,
    executable: bool,
}

impl FileNode {
    fn text(content: String) -> Self {
        Self { size: content.len() as u64, content, binary_sha256: None, executable: false }
    }
}

/// Everything a snapshot captures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct MachineState {
    image: MockImage,
    ps1: String,
    cwd: String,
    files: BTreeMap<String, FileNode>,
    flags: BTreeSet<String>,
    registers: Vec<RegisterFixture>,
    memory: Vec<MemoryRegion>,
    values: BTreeMap<String, String>,
}

impl MachineState {
    fn boot(image: MockImage) -> Self {
        let sc = &image.scenario;
        Self {
            ps1: DEFAULT_PS1.into(),
            cwd: HOME.into(),
            files: sc.files.iter().map(|(k, v)| (k.clone(), FileNode::text(v.clone()))).collect(),
            flags: BTreeSet::new(),
            registers: sc.debugger.registers.clone(),
            memory: sc.debugger.memory.clone(),
            values: sc.debugger.values.clone(),
            image,
        }
    }

    fn digest(&self) -> String {
        sha256_hex(serde_json::to_vec(self).expect("serializable state"))
    }

    fn scenario(&self) -> &GuestScenario {
        &self.image.scenario
    }

    fn utility_available(&self, name: &str) -> bool {
        !self.image.removed_utilities.contains(name) && self.scenario().utilities.iter().any(|u| u == name)
    }

    fn resolve_path(&self, p: &str) -> String {
        let joined = if p.starts_with('/') { p.to_string() } else { format!("{}/{}", self.cwd, p) };
        let mut parts: Vec<&str> = Vec::new();
        for seg in joined.split('/') {
            match seg {
                "" | "." => {}
                ".." => {
                    parts.pop();
                }
                s => parts.push(s),
            }
        }
        format!("/{}", parts.join("/"))
    }

    /// Path of an uploaded program named by `word`, as the shell would
    /// find it.
    fn resolve_program(&self, word: &str) -> Option<String> {
        let is_prog = |p: &str| self.files.get(p).is_some_and(|f| f.binary_sha256.is_some());
        if word.contains('/') {
            let p = self.resolve_path(word);
            is_prog(&p).then_some(p)
        } else {
            PATH_DIRS.iter().map(|d| format!("{d}/{word}")).find(|p| is_prog(p))
        }
    }
}

#[derive(Debug, Clone)]
struct MockBreakpoint {
    location: String,
    func: String,
    hits: u64,
}

struct Machine {
    st: MachineState,
    out: Option<PipeWriter>,
    written: u64,
    byte_base: u64,
    stub_out: Option<PipeWriter>,
    halted: bool,
    stop_frame: Option<String>,
    breakpoints: BTreeMap<u32, MockBreakpoint>,
    next_bp: u32,
    /// crashed or hung: no prompt, input ignored
    dead: bool,
    killed: bool,
    history: u32,
}

impl Machine {
    fn write_console(&mut self, text: &str) {
        if let Some(w) = self.out.as_mut() {
            if w.write_all(text.as_bytes()).and_then(|_| w.flush()).is_ok() {
                self.written += text.len() as u64;
            }
        }
    }

    fn write_stub(&mut self, lines: &[String]) {
        if let Some(w) = self.stub_out.as_mut() {
            let mut buf = String::new();
            for l in lines {
                buf.push_str(l);
                buf.push('\n');
            }
            let _ = w.write_all(buf.as_bytes()).and_then(|_| w.flush());
        }
    }

    fn console_target(&self) -> u64 {
        self.byte_base + self.written
    }

    /// Print a crash text; a halting crash leaves the guest dead.
    fn emit_crash(&mut self, c: &CrashEmission) {
        let text = self.st.image.crash_texts.get(&c.file).cloned().unwrap_or_default();
        let mut text = text.replace("\r\n", "\n");
        if !text.ends_with('\n') {
            text.push('\n');
        }
        self.write_console(&text);
        if c.halt {
            self.dead = true;
        }
    }
}

pub(super) struct Shared {
    m: Mutex<Machine>,
    cv: Condvar,
    transcript: Transcript,
    gate: DebugGate,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Machine> {
        self.m.lock().unwrap()
    }

    /// Wait until everything written to the console has been drained.
    fn console_barrier(&self, target: u64) {
        if !self.transcript.wait_bytes(target, BARRIER) {
            log::debug!("console barrier at {target} bytes timed out");
        }
    }

    /// Block while the debugger holds the guest. Returns false once killed.
    fn wait_unhalted(&self) -> bool {
        let mut m = self.lock();
        if !m.halted {
            return !m.killed;
        }
        while m.halted && !m.killed {
            m = self.cv.wait(m).unwrap();
        }
        let killed = m.killed;
        drop(m);
        if !killed {
            // resume record drained by the debugger before console output continues
            self.gate.wait_running(BARRIER);
        }
        !killed
    }
}

enum Input {
    Line(String),
    Interrupt,
    Quit,
}

fn input_loop(mut r: PipeReader, tx: Sender<Input>) {
    let mut line = Vec::new();
    let mut buf = [0u8; 1024];
    loop {
        let n = match r.read(&mut buf) {
            Ok(0) | Err(_) => return,
            Ok(n) => n,
        };
        for &b in &buf[..n] {
            let ev = match b {
                0x03 => {
                    line.clear();
                    Some(Input::Interrupt)
                }
                0x1c => Some(Input::Quit),
                b'\n' => Some(Input::Line(String::from_utf8_lossy(&std::mem::take(&mut line)).into_owned())),
                b'\r' => None,
                _ => {
                    line.push(b);
                    None
                }
            };
            if let Some(ev) = ev {
                if tx.send(ev).is_err() {
                    return;
                }
            }
        }
    }
}

enum Flow {
    Status(i32),
    /// the foreground program was killed by a signal
    Signaled(Input),
    /// the guest stopped responding
    Stop,
}

struct Executor {
    shared: Arc<Shared>,
    rx: Receiver<Input>,
    backlog: VecDeque<Input>,
    regex_cache: HashMap<String, Regex>,
}

impl Executor {
    fn emit(&self, text: &str) -> bool {
        if !self.shared.wait_unhalted() {
            return false;
        }
        let mut m = self.shared.lock();
        if m.killed {
            return false;
        }
        m.write_console(text);
        true
    }

    fn prompt(&self) {
        let ps1 = self.shared.lock().st.ps1.clone();
        self.emit(&ps1);
    }

    fn next_event(&mut self) -> Option<Input> {
        self.backlog.pop_front().or_else(|| self.rx.recv().ok())
    }

    fn boot(&mut self) {
        let (banner, delay, boots) = {
            let m = self.shared.lock();
            let sc = m.st.scenario();
            (sc.banner.clone(), sc.boot_delay_ms, sc.boots)
        };
        for line in banner {
            self.emit(&format!("{line}\n"));
        }
        if !boots {
            self.shared.lock().dead = true;
            return;
        }
        if delay > 0 {
            thread::sleep(Duration::from_millis(delay));
        }
        self.prompt();
    }

    fn run(mut self, cold: bool) {
        if cold {
            self.boot();
        }
        while let Some(ev) = self.next_event() {
            if !self.shared.wait_unhalted() {
                return;
            }
            if self.shared.lock().dead {
                continue;
            }
            match ev {
                Input::Line(l) => self.line(&l),
                Input::Interrupt => {
                    self.emit("^C\n");
                    self.prompt();
                }
                Input::Quit => {}
            }
        }
    }

    /// Sleep that yields to the debugger and ends early on a signal.
    fn sleep(&mut self, dur: Duration) -> Option<Input> {
        let mut deadline = Instant::now() + dur;
        loop {
            let paused = Instant::now();
            if !self.shared.wait_unhalted() {
                return None;
            }
            deadline += paused.elapsed();
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            match self.rx.recv_timeout((deadline - now).min(Duration::from_millis(20))) {
                Ok(Input::Line(l)) => self.backlog.push_back(Input::Line(l)),
                Ok(sig) => return Some(sig),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => return None,
            }
        }
    }

    fn line(&mut self, line: &str) {
        if !self.emit(&format!("{line}\n")) {
            return;
        }
        let mut status = 0;
        for (conn, seg) in split_list(line.trim()) {
            match conn {
                Connector::IfOk if status != 0 => continue,
                Connector::IfFailed if status == 0 => continue,
                _ => {}
            }
            match self.segment(&seg) {
                Flow::Status(s) => status = s,
                Flow::Signaled(sig) => {
                    self.emit(match sig {
                        Input::Quit => "^\\Quit\n",
                        _ => "^C\n",
                    });
                    break;
                }
                Flow::Stop => return,
            }
        }
        if !self.shared.lock().dead {
            self.prompt();
        }
    }

    fn regex(&mut self, pattern: &str) -> &Regex {
        self.regex_cache
            .entry(pattern.to_string())
            .or_insert_with(|| Regex::new(pattern).expect("validated at load"))
    }

    fn find_rule(&mut self, segment: &str, program: &str) -> Option<CommandRule> {
        let (rules, flags) = {
            let m = self.shared.lock();
            (m.st.scenario().rules.clone(), m.st.flags.clone())
        };
        for rule in rules {
            if rule.requires_flag.as_ref().is_some_and(|f| !flags.contains(f)) {
                continue;
            }
            if let Some(p) = &rule.pattern {
                if !self.regex(p).is_match(segment) {
                    continue;
                }
            }
            if let Some(want) = &rule.program {
                let m = self.shared.lock();
                let uploaded = m.st.resolve_program(program).is_some();
                let base = program.rsplit('/').next().unwrap_or(program);
                let ok = if want == "*" {
                    uploaded
                } else {
                    base == want && (uploaded || m.st.utility_available(want))
                };
                if !ok {
                    continue;
                }
            }
            return Some(rule);
        }
        None
    }

    fn segment(&mut self, segment: &str) -> Flow {
        let stages = split_pipeline(segment);
        let mut parsed = Vec::new();
        for stage in &stages {
            let Some(words) = shlex::split(stage) else {
                self.emit("sh: syntax error: unterminated quoted string\n");
                return Flow::Status(2);
            };
            let (words, redirect) = extract_redirect(words);
            parsed.push((words, redirect));
        }
        {
            let m = self.shared.lock();
            for (words, _) in &parsed {
                let Some(prog) = words.first() else { continue };
                let base = prog.rsplit('/').next().unwrap_or(prog);
                if m.st.image.removed_utilities.contains(base) && m.st.resolve_program(prog).is_none() {
                    drop(m);
                    self.emit(&format!("sh: {prog}: command not found\n"));
                    return Flow::Status(127);
                }
            }
        }
        let first_prog = parsed.first().and_then(|(w, _)| w.first()).cloned().unwrap_or_default();
        if let Some(rule) = self.find_rule(segment, &first_prog) {
            return self.run_rule(&rule);
        }
        let last = parsed.len().saturating_sub(1);
        let mut status = 0;
        for (i, (words, redirect)) in parsed.into_iter().enumerate() {
            let (out, st) = match self.simple(&words) {
                Ok(r) => r,
                Err(flow) => return flow,
            };
            status = st;
            match redirect {
                Some(r) => {
                    let mut m = self.shared.lock();
                    let path = m.st.resolve_path(&r.path);
                    if path != "/dev/null" {
                        let node = m.st.files.entry(path).or_insert_with(|| FileNode::text(String::new()));
                        if !r.append {
                            node.content.clear();
                        }
                        node.content.push_str(&out);
                        node.size = node.content.len() as u64;
                        node.binary_sha256 = None;
                    }
                }
                None if i == last => {
                    if !out.is_empty() && !self.emit(&out) {
                        return Flow::Stop;
                    }
                }
                None => {}
            }
        }
        Flow::Status(status)
    }

    fn run_rule(&mut self, rule: &CommandRule) -> Flow {
        if let Some(f) = &rule.set_flag {
            self.shared.lock().st.flags.insert(f.clone());
        }
        for func in &rule.calls {
            if !self.enter_function(func) {
                return Flow::Stop;
            }
            if self.shared.lock().dead {
                return Flow::Stop;
            }
        }
        if !rule.response.is_empty() {
            let mut text = rule.response.clone();
            if !text.ends_with('\n') {
                text.push('\n');
            }
            if !self.emit(&text) {
                return Flow::Stop;
            }
        }
        if rule.duration_ms > 0 {
            if let Some(sig) = self.sleep(Duration::from_millis(rule.duration_ms)) {
                return Flow::Signaled(sig);
            }
        }
        let post = {
            let m = self.shared.lock();
            rule.post_if_flag
                .iter()
                .find(|fp| m.st.flags.contains(&fp.flag))
                .map(|fp| fp.post.clone())
                .unwrap_or_else(|| rule.post.clone())
        };
        match post {
            PostState::Ok => Flow::Status(0),
            PostState::Hang => {
                self.shared.lock().dead = true;
                Flow::Stop
            }
            PostState::EmitCrash(c) => {
                if !self.shared.wait_unhalted() {
                    return Flow::Stop;
                }
                let mut m = self.shared.lock();
                m.emit_crash(&c);
                if m.dead {
                    Flow::Stop
                } else {
                    Flow::Status(0)
                }
            }
        }
    }

    /// The running command enters kernel function `func`; stop there if a
    /// breakpoint is set. Returns false once killed.
    fn enter_function(&self, func: &str) -> bool {
        let target = {
            let mut m = self.shared.lock();
            let Some((&id, bp)) = m.breakpoints.iter_mut().find(|(_, b)| b.func == func) else {
                return !m.killed;
            };
            bp.hits += 1;
            log::debug!("mock breakpoint {id} at {} hit", bp.location);
            m.halted = true;
            m.stop_frame = Some(func.to_string());
            (id, m.console_target())
        };
        self.shared.console_barrier(target.1);
        {
            let mut m = self.shared.lock();
            let frame = stub::frame_tuple(&m.st, func);
            m.write_stub(&[
                format!(
                    "*stopped,reason=\"breakpoint-hit\",disp=\"keep\",bkptno=\"{}\",frame={frame},thread-id=\"1\",stopped-threads=\"all\"",
                    target.0
                ),
                "(gdb)".into(),
            ]);
        }
        self.shared.wait_unhalted()
    }

    fn simple(&mut self, words: &[String]) -> Result<(String, i32), Flow> {
        let Some(prog) = words.first() else { return Ok((String::new(), 0)) };
        let args = &words[1..];
        if let Some((name, value)) = prog.split_once('=') {
            if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                if name == "PS1" {
                    self.shared.lock().st.ps1 = value.to_string();
                }
                return Ok((String::new(), 0));
            }
        }
        let mut m = self.shared.lock();
        let out = match prog.as_str() {
            "echo" => {
                let (newline, args) = match args.first().map(String::as_str) {
                    Some("-n") => (false, &args[1..]),
                    _ => (true, args),
                };
                let mut s = args.join(" ");
                if newline {
                    s.push('\n');
                }
                (s, 0)
            }
            "cat" => {
                let mut s = String::new();
                let mut st = 0;
                for a in args {
                    match m.st.files.get(&m.st.resolve_path(a)) {
                        Some(f) if f.binary_sha256.is_none() => s.push_str(&f.content),
                        Some(_) => s.push_str("\u{7f}ELF\n"),
                        None => {
                            s.push_str(&format!("cat: {a}: No such file or directory\n"));
                            st = 1;
                        }
                    }
                }
                (s, st)
            }
            "ls" => {
                let targets: Vec<String> = if args.is_empty() {
                    vec![m.st.cwd.clone()]
                } else {
                    args.iter().filter(|a| !a.starts_with('-')).cloned().collect()
                };
                let mut s = String::new();
                let mut st = 0;
                for t in targets {
                    let p = m.st.resolve_path(&t);
                    if m.st.files.contains_key(&p) {
                        s.push_str(&format!("{t}\n"));
                        continue;
                    }
                    let prefix = if p == "/" { "/".to_string() } else { format!("{p}/") };
                    let names: BTreeSet<&str> = m
                        .st
                        .files
                        .keys()
                        .filter_map(|k| k.strip_prefix(&prefix))
                        .map(|rest| rest.split('/').next().unwrap_or(rest))
                        .collect();
                    if names.is_empty() && p != HOME {
                        s.push_str(&format!("ls: {t}: No such file or directory\n"));
                        st = 1;
                    }
                    for n in names {
                        s.push_str(n);
                        s.push('\n');
                    }
                }
                (s, st)
            }
            "touch" => {
                for a in args {
                    let p = m.st.resolve_path(a);
                    m.st.files.entry(p).or_insert_with(|| FileNode::text(String::new()));
                }
                (String::new(), 0)
            }
            "rm" => {
                let force = args.iter().any(|a| a.starts_with('-') && a.contains('f'));
                let mut s = String::new();
                let mut st = 0;
                for a in args.iter().filter(|a| !a.starts_with('-')) {
                    let p = m.st.resolve_path(a);
                    if m.st.files.remove(&p).is_none() && !force {
                        s.push_str(&format!("rm: can't remove '{a}': No such file or directory\n"));
                        st = 1;
                    }
                }
                (s, st)
            }
            "chmod" => {
                let mut st = 0;
                let mut s = String::new();
                if let Some((mode, files)) = args.split_first() {
                    let exec = if mode.chars().all(|c| c.is_ascii_digit()) {
                        mode.chars().any(|c| matches!(c, '1' | '3' | '5' | '7'))
                    } else {
                        !mode.contains("-x")
                    };
                    for f in files {
                        let p = m.st.resolve_path(f);
                        match m.st.files.get_mut(&p) {
                            Some(node) => node.executable = exec,
                            None => {
                                s.push_str(&format!("chmod: {f}: No such file or directory\n"));
                                st = 1;
                            }
                        }
                    }
                }
                (s, st)
            }
            "sleep" => {
                let secs: f64 = args.first().and_then(|a| a.parse().ok()).unwrap_or(0.0);
                drop(m);
                if let Some(sig) = self.sleep(Duration::from_secs_f64(secs.max(0.0))) {
                    return Err(Flow::Signaled(sig));
                }
                return Ok((String::new(), 0));
            }
            "true" | ":" | "export" | "exit" | "set" | "stty" | "ulimit" | "mkdir" | "sync" => (String::new(), 0),
            "false" => (String::new(), 1),
            "id" => ("uid=0(root) gid=0(root) groups=0(root)\n".into(), 0),
            "whoami" => ("root\n".into(), 0),
            "hostname" => (format!("{}\n", m.st.scenario().hostname), 0),
            "pwd" => (format!("{}\n", m.st.cwd), 0),
            "cd" => {
                let target = args.first().cloned().unwrap_or_else(|| HOME.into());
                m.st.cwd = m.st.resolve_path(&target);
                (String::new(), 0)
            }
            "uname" => {
                let sc = m.st.scenario();
                let s = match args.first().map(String::as_str) {
                    Some("-r") => sc.kernel_release.clone(),
                    Some("-a") => format!("Linux {} {} #1 SMP PREEMPT x86_64 GNU/Linux", sc.hostname, sc.kernel_release),
                    Some("-n") => sc.hostname.clone(),
                    _ => "Linux".into(),
                };
                (format!("{s}\n"), 0)
            }
            "dmesg" => {
                let mut s = m.st.scenario().banner.join("\n");
                if !s.is_empty() {
                    s.push('\n');
                }
                (s, 0)
            }
            "which" => {
                let mut s = String::new();
                let mut st = 0;
                for a in args {
                    if let Some(p) = m.st.resolve_program(a) {
                        s.push_str(&format!("{p}\n"));
                    } else if m.st.utility_available(a) {
                        s.push_str(&format!("/usr/bin/{a}\n"));
                    } else {
                        st = 1;
                    }
                }
                (s, st)
            }
            _ => {
                let base = prog.rsplit('/').next().unwrap_or(prog);
                if let Some(path) = m.st.resolve_program(prog) {
                    if m.st.files.get(&path).is_some_and(|f| f.executable) {
                        (String::new(), 0)
                    } else {
                        (format!("sh: {prog}: Permission denied\n"), 126)
                    }
                } else if !prog.contains('/') && m.st.utility_available(base) {
                    (String::new(), 0)
                } else {
                    (format!("sh: {prog}: command not found\n"), 127)
                }
            }
        };
        Ok(out)
    }
}

pub(crate) struct MockInstance {
    shared: Arc<Shared>,
    console: Option<(PipeReader, PipeWriter)>,
    cold: bool,
}

impl MockInstance {
    fn spawn(st: MachineState, ctx: &GuestContext, cold: bool) -> Result<Self, GuestError> {
        let (out_r, out_w) = std::io::pipe()?;
        let (in_r, in_w) = std::io::pipe()?;
        let shared = Arc::new(Shared {
            m: Mutex::new(Machine {
                st,
                out: Some(out_w),
                written: 0,
                byte_base: ctx.transcript.bytes(),
                stub_out: None,
                halted: false,
                stop_frame: None,
                breakpoints: BTreeMap::new(),
                next_bp: 1,
                dead: false,
                killed: false,
                history: 0,
            }),
            cv: Condvar::new(),
            transcript: ctx.transcript.clone(),
            gate: ctx.gate.clone(),
        });
        let (tx, rx) = mpsc::channel();
        thread::Builder::new().name("mock-input".into()).spawn(move || input_loop(in_r, tx))?;
        let ex = Executor { shared: shared.clone(), rx, backlog: VecDeque::new(), regex_cache: HashMap::new() };
        thread::Builder::new().name("mock-guest".into()).spawn(move || ex.run(cold))?;
        Ok(Self { shared, console: Some((out_r, in_w)), cold })
    }

    pub fn cold_boot(image_path: &Path, ctx: &GuestContext) -> Result<Self, GuestError> {
        let image = MockImage::read(image_path).map_err(|e| GuestError::BackendUnavailable(e.to_string()))?;
        Self::spawn(MachineState::boot(image), ctx, true)
    }

    pub fn restore(state_path: &Path, ctx: &GuestContext) -> Result<Self, GuestError> {
        let text = std::fs::read_to_string(state_path)
            .map_err(|e| GuestError::RestoreFailed(format!("{}: {e}", state_path.display())))?;
        let st: MachineState =
            serde_json::from_str(&text).map_err(|e| GuestError::RestoreFailed(format!("snapshot state: {e}")))?;
        Self::spawn(st, ctx, false)
    }
}

impl Instance for MockInstance {
    fn take_console(&mut self) -> Option<(Box<dyn Read + Send>, Box<dyn Write + Send>)> {
        self.console.take().map(|(r, w)| (Box::new(r) as Box<dyn Read + Send>, Box::new(w) as Box<dyn Write + Send>))
    }

    fn warm(&self) -> bool {
        !self.cold
    }

    fn ready_pattern(&self) -> Regex {
        Regex::new(r"[#$] $").expect("static pattern")
    }

    fn state_digest(&self) -> Option<String> {
        Some(self.shared.lock().st.digest())
    }

    fn connect_stub(&self) -> Result<StubConnection, GuestError> {
        stub::connect(&self.shared)
    }

    fn install_binary(&self, dest: &str, bytes: &[u8]) -> Option<Result<(), GuestError>> {
        let mut m = self.shared.lock();
        if m.dead || m.killed {
            return Some(Err(GuestError::UploadFailed("guest is not responding".into())));
        }
        let node = FileNode {
            content: String::new(),
            binary_sha256: Some(sha256_hex(bytes)),
            size: bytes.len() as u64,
            executable: true,
        };
        m.st.files.insert(dest.to_string(), node);
        Some(Ok(()))
    }

    fn save_snapshot(&mut self, dir: &Path) -> Result<SnapshotRef, GuestError> {
        let m = self.shared.lock();
        if m.dead || m.killed {
            return Err(GuestError::SnapshotFailed("guest is not responding".into()));
        }
        let digest = m.st.digest();
        let path = dir.join("state.json");
        write_atomic(&path, to_stable_json(&m.st)).map_err(|e| GuestError::SnapshotFailed(e.to_string()))?;
        Ok(SnapshotRef {
            snapshot_id: format!("mock-{}", &digest[..12]),
            backend: BackendKind::Mock,
            path,
            initial_digest: Some(digest),
        })
    }

    fn kill(&mut self) {
        let mut m = self.shared.lock();
        m.killed = true;
        m.out = None;
        m.stub_out = None;
        drop(m);
        self.shared.cv.notify_all();
    }
}

impl Drop for MockInstance {
    fn drop(&mut self) {
        self.kill();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_normalize() {
        let img = MockImage {
            scenario: serde_json::from_str(r#"{"name":"t"}"#).unwrap(),
            crash_texts: BTreeMap::new(),
            removed_utilities: BTreeSet::new(),
        };
        let st = MachineState::boot(img);
        assert_eq!(st.resolve_path("./poc"), "/root/poc");
        assert_eq!(st.resolve_path("../tmp/x"), "/tmp/x");
        assert_eq!(st.resolve_path("/a//b/./c"), "/a/b/c");
        assert_eq!(parse_address("0x10"), Some(16));
        assert_eq!(parse_address("42"), Some(42));
        assert_eq!(parse_address("zz"), None);
    }
}
