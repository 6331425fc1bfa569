//! MI responder for the mock guest, standing in for a debugger attached to
//! the kernel's stub. Speaks the subset of MI the harness and agents use.

use std::io::{BufRead, BufReader, PipeReader};
use std::sync::Arc;
use std::thread;

use super::{parse_address, CrashEmission, MachineState, Machine, MockBreakpoint, Shared};
use crate::guestvm::GuestError;
use crate::kdbg::{called_function, quote_cstring, split_assignment, MiLine, StubConnection};

const RUNNING_MSG: &str =
    "Cannot execute this command while the target is running.\nUse the \"interrupt\" command to stop the target\nand then try again.";
const IDLE_FRAME: &str = "default_idle";

pub(super) fn connect(shared: &Arc<Shared>) -> Result<StubConnection, GuestError> {
    let (cmd_r, cmd_w) = std::io::pipe()?;
    let (out_r, out_w) = std::io::pipe()?;
    {
        let mut m = shared.lock();
        if m.killed || m.dead {
            return Err(GuestError::BackendUnavailable("guest stub is not answering".into()));
        }
        if m.stub_out.is_some() {
            return Err(GuestError::BackendUnavailable("debugger stub already connected".into()));
        }
        m.stub_out = Some(out_w);
        m.write_stub(&["=thread-group-added,id=\"i1\"".into(), "(gdb)".into()]);
    }
    let shared = shared.clone();
    thread::Builder::new().name("mock-stub".into()).spawn(move || serve(shared, cmd_r))?;
    Ok(StubConnection { reader: Box::new(out_r), writer: Box::new(cmd_w), keepalive: None })
}

fn serve(shared: Arc<Shared>, reader: PipeReader) {
    for line in BufReader::new(reader).lines() {
        let Ok(line) = line else { break };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let digits = line.chars().take_while(char::is_ascii_digit).count();
        let (token, cmd) = line.split_at(digits);
        let mut r = Responder { shared: &shared, token: token.to_string(), lines: Vec::new() };
        r.handle(cmd.trim());
        if shared.lock().killed {
            break;
        }
    }
    let mut m = shared.lock();
    m.breakpoints.clear();
    m.stub_out = None;
    if m.halted {
        m.halted = false;
        m.stop_frame = None;
    }
    drop(m);
    shared.cv.notify_all();
}

pub(super) fn frame_tuple(st: &MachineState, func: &str) -> String {
    let sym = st.scenario().debugger.symbols.get(func);
    let addr = sym.map(|s| s.address.as_str()).unwrap_or("0xffffffff81000000");
    let mut t = format!("{{addr=\"{addr}\",func=\"{func}\",args=[]");
    if let Some(s) = sym.filter(|s| !s.file.is_empty()) {
        t.push_str(&format!(",file=\"{}\",fullname=\"/src/{}\",line=\"{}\"", s.file, s.file, s.line));
    }
    t.push_str(",arch=\"i386:x86-64\"}");
    t
}

fn split_args(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = s.trim();
    while !rest.is_empty() {
        if rest.starts_with('"') {
            let mut end = 1;
            let b = rest.as_bytes();
            while end < b.len() {
                match b[end] {
                    b'\\' => end += 2,
                    b'"' => break,
                    _ => end += 1,
                }
            }
            let end = (end + 1).min(rest.len());
            let quoted = &rest[..end];
            let text = match crate::kdbg::parse_mi_record(&format!("~{quoted}")) {
                Ok(MiLine::Record(r)) => r.text.unwrap_or_default(),
                _ => quoted.trim_matches('"').to_string(),
            };
            out.push(text);
            rest = rest[end..].trim_start();
        } else {
            let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
            out.push(rest[..end].to_string());
            rest = rest[end..].trim_start();
        }
    }
    out
}

fn mi_escape(s: &str) -> String {
    quote_cstring(s)
}

struct Responder<'a> {
    shared: &'a Arc<Shared>,
    token: String,
    lines: Vec<String>,
}

impl Responder<'_> {
    fn stream(&mut self, text: &str) {
        self.lines.push(format!("~{}", mi_escape(text)));
    }

    /// Write buffered records plus the result, after the console drained.
    fn finish(&mut self, result: String) {
        let target = self.shared.lock().console_target();
        self.shared.console_barrier(target);
        let mut lines = std::mem::take(&mut self.lines);
        lines.push(format!("{}{result}", self.token));
        lines.push("(gdb)".into());
        self.shared.lock().write_stub(&lines);
    }

    fn done(&mut self, payload: &str) {
        if payload.is_empty() {
            self.finish("^done".into());
        } else {
            self.finish(format!("^done,{payload}"));
        }
    }

    fn error(&mut self, msg: &str) {
        self.finish(format!("^error,msg={}", mi_escape(msg)));
    }

    fn halted(&self) -> bool {
        self.shared.lock().halted
    }

    /// Run side effects registered for `text` in the scenario.
    fn effects(&mut self, text: &str) {
        let mut m = self.shared.lock();
        let effects = m.st.scenario().debugger.effects.clone();
        for e in effects {
            let Ok(re) = regex::Regex::new(&e.pattern) else { continue };
            if !re.is_match(text) {
                continue;
            }
            if let Some(f) = e.set_flag {
                m.st.flags.insert(f);
            }
            if let Some(c) = e.emit_crash {
                emit_crash(&mut m, &c);
            }
        }
    }

    fn handle(&mut self, cmd: &str) {
        let args = split_args(cmd);
        let Some(word) = args.first().cloned() else { return self.error("empty command") };
        let rest = &args[1..];
        match word.as_str() {
            "-gdb-set" | "-gdb-show" | "-enable-pretty-printing" | "-list-features" | "-environment-cd"
            | "-file-exec-and-symbols" | "-inferior-tty-set" => self.done(""),
            "-target-select" => self.finish("^connected".into()),
            "-break-insert" => {
                let loc = rest.iter().rfind(|a| !a.starts_with('-')).cloned().unwrap_or_default();
                match self.insert_breakpoint(&loc) {
                    Ok(bkpt) => self.done(&format!("bkpt={bkpt}")),
                    Err(msg) => self.error(&msg),
                }
            }
            "-break-delete" => match self.delete_breakpoints(rest) {
                Ok(()) => self.done(""),
                Err(msg) => self.error(&msg),
            },
            "-break-list" => {
                let body = self.breakpoint_tuples().join(",");
                self.done(&format!(
                    "BreakpointTable={{nr_rows=\"{}\",nr_cols=\"6\",hdr=[],body=[{body}]}}",
                    self.shared.lock().breakpoints.len()
                ));
            }
            "-exec-continue" => self.exec_continue(),
            "-exec-interrupt" => self.exec_interrupt(),
            "-exec-next" | "-exec-step" | "-exec-finish" | "-exec-next-instruction" | "-exec-step-instruction" => {
                self.step()
            }
            "-exec-return" | "-exec-jump" => {
                if !self.halted() {
                    return self.error(RUNNING_MSG);
                }
                self.effects(cmd);
                let frame = self.current_frame();
                self.done(&format!("frame={frame}"));
            }
            "-data-evaluate-expression" => {
                let expr = rest.join(" ");
                if !self.halted() {
                    return self.error(RUNNING_MSG);
                }
                match self.eval(&expr) {
                    Ok(v) => {
                        self.effects(&expr);
                        self.done(&format!("value={}", mi_escape(&v)));
                    }
                    Err(e) => self.error(&e),
                }
            }
            "-data-list-register-names" => {
                let names: Vec<String> = self
                    .shared
                    .lock()
                    .st
                    .registers
                    .iter()
                    .map(|r| mi_escape(&r.name))
                    .collect();
                self.done(&format!("register-names=[{}]", names.join(",")));
            }
            "-data-list-register-values" => {
                if !self.halted() {
                    return self.error(RUNNING_MSG);
                }
                let vals: Vec<String> = self
                    .shared
                    .lock()
                    .st
                    .registers
                    .iter()
                    .enumerate()
                    .map(|(i, r)| format!("{{number=\"{i}\",value={}}}", mi_escape(&r.value)))
                    .collect();
                self.done(&format!("register-values=[{}]", vals.join(",")));
            }
            "-data-read-memory-bytes" => {
                if !self.halted() {
                    return self.error(RUNNING_MSG);
                }
                let pos: Vec<&String> = rest.iter().filter(|a| !a.starts_with('-')).collect();
                let (Some(addr), Some(len)) = (pos.first(), pos.get(1).and_then(|l| l.parse::<u64>().ok())) else {
                    return self.error("Usage: ADDR LENGTH");
                };
                match self.read_memory(addr, len) {
                    Ok((a, hex)) => self.done(&format!(
                        "memory=[{{begin=\"0x{a:x}\",offset=\"0x0000000000000000\",end=\"0x{:x}\",contents=\"{hex}\"}}]",
                        a + len
                    )),
                    Err(e) => self.error(&e),
                }
            }
            "-data-write-memory-bytes" => {
                if !self.halted() {
                    return self.error(RUNNING_MSG);
                }
                let (Some(addr), Some(hex)) = (rest.first(), rest.get(1)) else {
                    return self.error("Usage: ADDR CONTENTS");
                };
                match self.write_memory(addr, hex) {
                    Ok(()) => {
                        self.effects(cmd);
                        self.done("")
                    }
                    Err(e) => self.error(&e),
                }
            }
            "-thread-info" => {
                let state = if self.halted() { "stopped" } else { "running" };
                self.done(&format!(
                    "threads=[{{id=\"1\",target-id=\"Thread 1.1 (CPU#0 [running])\",state=\"{state}\"}}],current-thread-id=\"1\""
                ));
            }
            "-stack-list-frames" => {
                if !self.halted() {
                    return self.error(RUNNING_MSG);
                }
                let frame = self.current_frame();
                self.done(&format!("stack=[frame={}]", frame.replacen('{', "{level=\"0\",", 1)));
            }
            "-interpreter-exec" => {
                let inner = rest.get(1).cloned().unwrap_or_default();
                if rest.first().map(String::as_str) != Some("console") {
                    return self.error("Only the console interpreter is supported");
                }
                self.cli(&inner);
            }
            other => self.finish(format!(
                "^error,msg={},code=\"undefined-command\"",
                mi_escape(&format!("Undefined MI command: {}", other.trim_start_matches('-')))
            )),
        }
    }

    fn cli(&mut self, cmd: &str) {
        let cmd = cmd.trim();
        let (word, rest) = match cmd.find(char::is_whitespace) {
            Some(p) => (&cmd[..p], cmd[p..].trim()),
            None => (cmd, ""),
        };
        let base = word.split('/').next().unwrap_or(word);
        match base {
            "info" => {
                let sub = rest.split_whitespace().next().unwrap_or("");
                match sub {
                    "threads" => {
                        let func = self.shared.lock().stop_frame.clone().unwrap_or_else(|| "[running]".into());
                        self.stream(&format!("* 1    Thread 1.1 (CPU#0 [running]) {func} ()\n"));
                    }
                    "registers" | "reg" | "r" => {
                        if !self.halted() {
                            return self.error(RUNNING_MSG);
                        }
                        let regs = self.shared.lock().st.registers.clone();
                        for r in regs {
                            self.stream(&format!("{:<15}{:<19}{}\n", r.name, r.value, r.value));
                        }
                    }
                    "breakpoints" | "break" | "b" => {
                        let bps: Vec<(u32, MockBreakpoint)> =
                            self.shared.lock().breakpoints.iter().map(|(k, v)| (*k, v.clone())).collect();
                        if bps.is_empty() {
                            self.stream("No breakpoints or watchpoints.\n");
                        } else {
                            self.stream("Num     Type           Disp Enb What\n");
                            for (id, b) in bps {
                                self.stream(&format!("{id:<7} breakpoint     keep y   in {}\n", b.func));
                                if b.hits > 0 {
                                    self.stream(&format!("\tbreakpoint already hit {} time(s)\n", b.hits));
                                }
                            }
                        }
                    }
                    _ => {}
                }
                self.done("");
            }
            "bt" | "backtrace" | "where" => {
                if !self.halted() {
                    return self.error(RUNNING_MSG);
                }
                let (func, loc) = {
                    let m = self.shared.lock();
                    let f = m.stop_frame.clone().unwrap_or_else(|| IDLE_FRAME.into());
                    let loc = m
                        .st
                        .scenario()
                        .debugger
                        .symbols
                        .get(&f)
                        .filter(|s| !s.file.is_empty())
                        .map(|s| format!(" at {}:{}", s.file, s.line))
                        .unwrap_or_default();
                    (f, loc)
                };
                self.stream(&format!("#0  {func} (){loc}\n"));
                self.done("");
            }
            "print" | "p" | "output" | "inspect" | "call" => {
                if !self.halted() {
                    return self.error(RUNNING_MSG);
                }
                match self.eval(rest) {
                    Ok(v) => {
                        self.effects(cmd);
                        if base == "output" {
                            self.stream(&v);
                        } else {
                            let n = {
                                let mut m = self.shared.lock();
                                m.history += 1;
                                m.history
                            };
                            self.stream(&format!("${n} = {v}\n"));
                        }
                        self.done("");
                    }
                    Err(e) => self.error(&e),
                }
            }
            "set" => {
                let (sub, after) = match rest.find(char::is_whitespace) {
                    Some(p) => (&rest[..p], rest[p..].trim()),
                    None => (rest, ""),
                };
                let expr = if sub == "var" || sub == "variable" { after } else { rest };
                if split_assignment(expr).is_none() {
                    return self.done("");
                }
                if !self.halted() {
                    return self.error(RUNNING_MSG);
                }
                match self.eval(expr) {
                    Ok(_) => {
                        self.effects(cmd);
                        self.done("")
                    }
                    Err(e) => self.error(&e),
                }
            }
            "continue" | "c" => self.exec_continue(),
            "interrupt" => self.exec_interrupt(),
            "break" | "b" | "tbreak" | "hbreak" => match self.insert_breakpoint(rest) {
                Ok(bkpt) => {
                    let (id, addr) = {
                        let m = self.shared.lock();
                        let id = m.next_bp - 1;
                        let addr = m
                            .breakpoints
                            .get(&id)
                            .and_then(|b| m.st.scenario().debugger.symbols.get(&b.func))
                            .map(|s| s.address.clone())
                            .unwrap_or_default();
                        (id, addr)
                    };
                    self.stream(&format!("Breakpoint {id} at {addr}\n"));
                    self.lines.push(format!("=breakpoint-created,bkpt={bkpt}"));
                    self.done("");
                }
                Err(e) => self.error(&e),
            },
            "delete" | "d" => {
                let ids: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
                let result = if ids.is_empty() {
                    self.shared.lock().breakpoints.clear();
                    Ok(())
                } else {
                    self.delete_breakpoints(&ids)
                };
                match result {
                    Ok(()) => self.done(""),
                    Err(e) => self.error(&e),
                }
            }
            "x" => {
                if !self.halted() {
                    return self.error(RUNNING_MSG);
                }
                let count: u64 = word
                    .split('/')
                    .nth(1)
                    .map(|f| f.chars().take_while(char::is_ascii_digit).collect::<String>())
                    .and_then(|n| n.parse().ok())
                    .unwrap_or(1);
                match self.read_memory(rest, count) {
                    Ok((a, hex)) => {
                        let bytes: Vec<String> =
                            hex.as_bytes().chunks(2).map(|c| format!("0x{}", std::str::from_utf8(c).unwrap())).collect();
                        for (i, chunk) in bytes.chunks(8).enumerate() {
                            self.stream(&format!("0x{:x}:\t{}\n", a + 8 * i as u64, chunk.join("\t")));
                        }
                        self.done("");
                    }
                    Err(e) => self.error(&e),
                }
            }
            "jump" | "j" | "return" => {
                if !self.halted() {
                    return self.error(RUNNING_MSG);
                }
                self.effects(cmd);
                self.done("");
            }
            "stepi" | "si" | "nexti" | "ni" | "step" | "s" | "next" | "n" | "finish" => self.step(),
            "detach" | "disconnect" | "target" | "file" | "symbol-file" | "add-symbol-file" => self.done(""),
            _ => self.error(&format!("Undefined command: \"{word}\".  Try \"help\".")),
        }
    }

    fn current_frame(&self) -> String {
        let m = self.shared.lock();
        let f = m.stop_frame.clone().unwrap_or_else(|| IDLE_FRAME.into());
        frame_tuple(&m.st, &f)
    }

    fn exec_continue(&mut self) {
        if !self.halted() {
            return self.error(RUNNING_MSG);
        }
        self.lines.push(format!("{}^running", self.token));
        self.lines.push("*running,thread-id=\"all\"".into());
        self.lines.push("(gdb)".into());
        let lines = std::mem::take(&mut self.lines);
        let mut m = self.shared.lock();
        m.write_stub(&lines);
        m.halted = false;
        m.stop_frame = None;
        drop(m);
        self.shared.cv.notify_all();
    }

    fn exec_interrupt(&mut self) {
        if self.halted() {
            return self.error("The program is not being run.");
        }
        self.done("");
        let target = {
            let mut m = self.shared.lock();
            m.halted = true;
            m.stop_frame = Some(IDLE_FRAME.into());
            m.console_target()
        };
        self.shared.console_barrier(target);
        let frame = self.current_frame();
        self.shared.lock().write_stub(&[
            format!(
                "*stopped,reason=\"signal-received\",signal-name=\"SIGINT\",signal-meaning=\"Interrupt\",frame={frame},thread-id=\"1\",stopped-threads=\"all\""
            ),
            "(gdb)".into(),
        ]);
    }

    fn step(&mut self) {
        if !self.halted() {
            return self.error(RUNNING_MSG);
        }
        self.lines.push(format!("{}^running", self.token));
        self.lines.push("*running,thread-id=\"all\"".into());
        self.lines.push("(gdb)".into());
        let frame = self.current_frame();
        self.lines.push(format!(
            "*stopped,reason=\"end-stepping-range\",frame={frame},thread-id=\"1\",stopped-threads=\"all\""
        ));
        self.lines.push("(gdb)".into());
        let lines = std::mem::take(&mut self.lines);
        self.shared.lock().write_stub(&lines);
    }

    fn breakpoint_tuples(&self) -> Vec<String> {
        let m = self.shared.lock();
        m.breakpoints.iter().map(|(id, b)| bkpt_tuple(&m, *id, b)).collect()
    }

    fn insert_breakpoint(&mut self, loc: &str) -> Result<String, String> {
        let loc = loc.trim();
        if loc.is_empty() {
            return Err("Argument required (location).".into());
        }
        let mut m = self.shared.lock();
        let symbols = &m.st.scenario().debugger.symbols;
        let func = if let Some(addr) = loc.strip_prefix('*') {
            let a = parse_address(addr).ok_or_else(|| format!("No symbol \"{addr}\" in current context."))?;
            symbols
                .iter()
                .find(|(_, s)| parse_address(&s.address) == Some(a))
                .map(|(n, _)| n.clone())
                .unwrap_or_else(|| "??".into())
        } else if let Some((file, line)) = loc.rsplit_once(':') {
            let line: u32 = line.parse().map_err(|_| format!("malformed linespec: \"{loc}\""))?;
            symbols
                .iter()
                .find(|(_, s)| s.line == line && (s.file == file || s.file.ends_with(&format!("/{file}"))))
                .map(|(n, _)| n.clone())
                .ok_or_else(|| format!("No line {line} in file \"{file}\"."))?
        } else if symbols.contains_key(loc) {
            loc.to_string()
        } else {
            return Err(format!("Function \"{loc}\" not defined."));
        };
        let id = m.next_bp;
        m.next_bp += 1;
        let bp = MockBreakpoint { location: loc.to_string(), func, hits: 0 };
        let t = bkpt_tuple(&m, id, &bp);
        m.breakpoints.insert(id, bp);
        Ok(t)
    }

    fn delete_breakpoints(&mut self, ids: &[String]) -> Result<(), String> {
        let mut m = self.shared.lock();
        for id in ids {
            let n: u32 = id.parse().map_err(|_| format!("Convenience variable must have integer value.\nBad breakpoint argument: '{id}'"))?;
            if m.breakpoints.remove(&n).is_none() {
                return Err(format!("No breakpoint number {n}."));
            }
        }
        Ok(())
    }

    fn address_of(&self, text: &str) -> Result<u64, String> {
        let t = text.trim().trim_start_matches('&');
        if let Some(a) = parse_address(t) {
            return Ok(a);
        }
        let m = self.shared.lock();
        m.st.scenario()
            .debugger
            .symbols
            .get(t)
            .and_then(|s| parse_address(&s.address))
            .ok_or_else(|| format!("No symbol \"{t}\" in current context."))
    }

    fn read_memory(&self, addr: &str, len: u64) -> Result<(u64, String), String> {
        let a = self.address_of(addr)?;
        let m = self.shared.lock();
        for region in &m.st.memory {
            let base = parse_address(&region.address).unwrap_or(0);
            let bytes = hex::decode(&region.hex).unwrap_or_default();
            let end = base + bytes.len() as u64;
            if a >= base && a.saturating_add(len) <= end {
                let off = (a - base) as usize;
                return Ok((a, hex::encode(&bytes[off..off + len as usize])));
            }
        }
        Err(format!("Unable to read memory at 0x{a:x}."))
    }

    fn write_memory(&self, addr: &str, hex_text: &str) -> Result<(), String> {
        let a = self.address_of(addr)?;
        let data = hex::decode(hex_text).map_err(|e| format!("bad contents: {e}"))?;
        let mut m = self.shared.lock();
        for region in &mut m.st.memory {
            let base = parse_address(&region.address).unwrap_or(0);
            let mut bytes = hex::decode(&region.hex).unwrap_or_default();
            let end = base + bytes.len() as u64;
            if a >= base && a.saturating_add(data.len() as u64) <= end {
                let off = (a - base) as usize;
                bytes[off..off + data.len()].copy_from_slice(&data);
                region.hex = hex::encode(bytes);
                return Ok(());
            }
        }
        Err(format!("Cannot access memory at address 0x{a:x}"))
    }

    fn rvalue(&self, e: &str) -> Result<String, String> {
        let e = e.trim();
        let m = self.shared.lock();
        if let Some(reg) = e.strip_prefix('$') {
            return Ok(m.st.registers.iter().find(|r| r.name == reg).map(|r| r.value.clone()).unwrap_or_else(|| "void".into()));
        }
        if let Some(v) = m.st.values.get(e) {
            return Ok(v.clone());
        }
        let lit = e.strip_prefix('-').unwrap_or(e);
        if parse_address(lit).is_some() {
            return Ok(e.to_string());
        }
        if let Some(s) = m.st.scenario().debugger.symbols.get(e) {
            return Ok(format!("{{void (void)}} {} <{e}>", s.address));
        }
        Err(format!("No symbol \"{e}\" in current context."))
    }

    fn eval(&mut self, expr: &str) -> Result<String, String> {
        let expr = expr.trim();
        if expr.is_empty() {
            return Err("Argument required (expression to compute).".into());
        }
        if let Some(f) = called_function(expr) {
            let known = self.shared.lock().st.scenario().debugger.symbols.contains_key(&f);
            return if known { Ok("0".into()) } else { Err(format!("No symbol \"{f}\" in current context.")) };
        }
        if let Some((lhs, rhs)) = split_assignment(expr) {
            let v = self.rvalue(&rhs)?;
            let mut m = self.shared.lock();
            if let Some(reg) = lhs.strip_prefix('$') {
                match m.st.registers.iter_mut().find(|r| r.name == reg) {
                    Some(r) => r.value = v.clone(),
                    None => return Err(format!("Invalid register `{reg}'")),
                }
            } else {
                m.st.values.insert(lhs, v.clone());
            }
            return Ok(v);
        }
        self.rvalue(expr)
    }
}

fn emit_crash(m: &mut Machine, c: &CrashEmission) {
    m.emit_crash(c);
}

fn bkpt_tuple(m: &Machine, id: u32, b: &MockBreakpoint) -> String {
    let sym = m.st.scenario().debugger.symbols.get(&b.func);
    let addr = sym.map(|s| s.address.clone()).unwrap_or_else(|| "<PENDING>".into());
    let mut t = format!(
        "{{number=\"{id}\",type=\"breakpoint\",disp=\"keep\",enabled=\"y\",addr=\"{addr}\",func=\"{}\"",
        b.func
    );
    if let Some(s) = sym.filter(|s| !s.file.is_empty()) {
        t.push_str(&format!(",file=\"{}\",fullname=\"/src/{}\",line=\"{}\"", s.file, s.file, s.line));
    }
    t.push_str(&format!(
        ",thread-groups=[\"i1\"],times=\"{}\",original-location={}}}",
        b.hits,
        quote_cstring(&b.location)
    ));
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mi_arguments_unquote() {
        assert_eq!(split_args("-data-evaluate-expression \"a = \\\"x\\\"\""), vec!["-data-evaluate-expression", "a = \"x\""]);
        assert_eq!(split_args("-interpreter-exec console \"info threads\""), vec!["-interpreter-exec", "console", "info threads"]);
        assert_eq!(split_args("-break-insert -f nft_set_destroy"), vec!["-break-insert", "-f", "nft_set_destroy"]);
    }
}
