//! One guest console: a writer for commands and a drain thread that decodes
//! everything the guest prints into the shared [`Transcript`].
//!
//! Command boundaries are found through a sentinel shell prompt. The drain
//! counts sentinel occurrences; an exec expects exactly one more prompt
//! than were owed before it wrote its command.

use std::io::{Read, Write};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use regex::Regex;
use std::sync::LazyLock;

use super::transcript::Transcript;
use crate::verdict::classify_banner;

/// Prompt the harness installs in the guest shell.
pub const PROMPT_SENTINEL: &str = "__REPRO_PROMPT__# ";
/// Shell assignment installing [`PROMPT_SENTINEL`]; split in two quoted
/// halves so the echoed command never contains the sentinel itself.
pub const PS1_SETUP: &str = "PS1='__REPRO_''PROMPT__# '";
/// What the sentinel is rewritten to in transcript lines.
const PROMPT_DISPLAY: &str = "# ";

static KERNEL_TIMESTAMP: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(?:<\d>)?\[\s*\d+\.\d+\]").unwrap());

/// Line prefixes the kernel uses for reports that may lack a timestamp.
pub const SEVERITY_TOKENS: &[&str] = &[
    "BUG:",
    "WARNING:",
    "INFO:",
    "Oops",
    "Kernel panic",
    "general protection fault",
    "kernel BUG at",
    "Call Trace:",
    "RIP:",
    "---[ end",
];

/// Whether a console line came from the kernel log rather than a program.
pub fn is_kernel_line(line: &str) -> bool {
    if KERNEL_TIMESTAMP.is_match(line) {
        return true;
    }
    let t = line.trim_start();
    SEVERITY_TOKENS.iter().any(|tok| t.starts_with(tok))
}

#[derive(Debug)]
struct State {
    /// decoded text since this console opened, sentinel intact
    raw: String,
    prompts: u64,
    eof: bool,
    pending: String,
    counted_in_pending: usize,
    last_activity: Instant,
}

#[derive(Debug)]
struct Shared {
    st: Mutex<State>,
    cv: Condvar,
}

/// How a wait for console output ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum WaitEnd {
    Prompt,
    TimedOut,
    Eof,
    Halted,
    CrashSettled,
}

pub(crate) struct WaitResult {
    pub end: WaitEnd,
    pub text: String,
}

pub(crate) struct ConsoleChannel {
    writer: Mutex<Option<Box<dyn Write + Send>>>,
    shared: Arc<Shared>,
    transcript: Transcript,
    expected: Mutex<u64>,
    drain: Option<JoinHandle<()>>,
}

fn record_lines(st: &mut State, transcript: &Transcript) {
    while let Some(nl) = st.pending.find('\n') {
        let line: String = st.pending[..nl].to_string();
        let total = line.matches(PROMPT_SENTINEL).count();
        st.prompts += total.saturating_sub(st.counted_in_pending) as u64;
        st.counted_in_pending = 0;
        let text = line.trim_end_matches('\r').replace(PROMPT_SENTINEL, PROMPT_DISPLAY);
        transcript.push_guest(text);
        st.pending.drain(..=nl);
    }
    let in_pending = st.pending.matches(PROMPT_SENTINEL).count();
    if in_pending > st.counted_in_pending {
        st.prompts += (in_pending - st.counted_in_pending) as u64;
        st.counted_in_pending = in_pending;
    }
}

fn drain_loop(mut reader: Box<dyn Read + Send>, shared: Arc<Shared>, transcript: Transcript) {
    let mut buf = [0u8; 4096];
    let mut carry: Vec<u8> = Vec::new();
    loop {
        let n = match reader.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => n,
        };
        carry.extend_from_slice(&buf[..n]);
        let mut text = String::new();
        loop {
            match std::str::from_utf8(&carry) {
                Ok(s) => {
                    text.push_str(s);
                    carry.clear();
                    break;
                }
                Err(e) => {
                    let valid = e.valid_up_to();
                    text.push_str(std::str::from_utf8(&carry[..valid]).expect("validated prefix"));
                    match e.error_len() {
                        Some(bad) => {
                            text.push('\u{FFFD}');
                            carry.drain(..valid + bad);
                        }
                        None => {
                            carry.drain(..valid);
                            break;
                        }
                    }
                }
            }
        }
        {
            let mut st = shared.st.lock().unwrap();
            st.raw.push_str(&text);
            st.pending.push_str(&text);
            st.last_activity = Instant::now();
            record_lines(&mut st, &transcript);
        }
        transcript.add_bytes(n as u64);
        shared.cv.notify_all();
    }
    let mut st = shared.st.lock().unwrap();
    if !carry.is_empty() {
        st.raw.push('\u{FFFD}');
        st.pending.push('\u{FFFD}');
    }
    st.eof = true;
    shared.cv.notify_all();
}

impl ConsoleChannel {
    pub fn open(reader: Box<dyn Read + Send>, writer: Box<dyn Write + Send>, transcript: Transcript) -> Self {
        let shared = Arc::new(Shared {
            st: Mutex::new(State {
                raw: String::new(),
                prompts: 0,
                eof: false,
                pending: String::new(),
                counted_in_pending: 0,
                last_activity: Instant::now(),
            }),
            cv: Condvar::new(),
        });
        let drain = {
            let shared = shared.clone();
            let transcript = transcript.clone();
            thread::Builder::new()
                .name("console-drain".into())
                .spawn(move || drain_loop(reader, shared, transcript))
                .expect("spawn console drain")
        };
        Self { writer: Mutex::new(Some(writer)), shared, transcript, expected: Mutex::new(0), drain: Some(drain) }
    }

    pub fn prompts_seen(&self) -> u64 {
        self.shared.st.lock().unwrap().prompts
    }

    #[cfg(test)]
    pub fn is_eof(&self) -> bool {
        self.shared.st.lock().unwrap().eof
    }

    pub fn raw_text(&self) -> String {
        self.shared.st.lock().unwrap().raw.clone()
    }

    /// Prompts still owed by commands that have not finished.
    pub fn owed_prompts(&self) -> u64 {
        let expected = *self.expected.lock().unwrap();
        expected.saturating_sub(self.prompts_seen())
    }

    pub fn write_bytes(&self, bytes: &[u8]) -> std::io::Result<()> {
        let mut w = self.writer.lock().unwrap();
        let w = w.as_mut().ok_or_else(|| std::io::Error::new(std::io::ErrorKind::BrokenPipe, "console closed"))?;
        w.write_all(bytes)?;
        w.flush()
    }

    /// Count one more prompt as owed (the caller is about to cause one).
    pub fn expect_prompt(&self) -> u64 {
        let mut e = self.expected.lock().unwrap();
        *e += 1;
        *e
    }

    /// Treat every prompt printed so far as accounted for.
    pub fn sync_expected(&self) {
        *self.expected.lock().unwrap() = self.prompts_seen();
    }

    /// Block until the raw text matches `pattern`, or `timeout`.
    pub fn wait_for_pattern(&self, pattern: &Regex, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut st = self.shared.st.lock().unwrap();
        loop {
            if pattern.is_match(&st.raw) {
                return true;
            }
            let now = Instant::now();
            if now >= deadline || st.eof {
                return false;
            }
            st = self.shared.cv.wait_timeout(st, deadline - now).unwrap().0;
        }
    }

    /// Write `payload` plus a newline and wait until the prompt it owes
    /// arrives, or until another end condition holds.
    pub fn run(
        &self,
        payload: &str,
        deadline: Instant,
        halted: &dyn Fn() -> bool,
        crash_settle: Option<Duration>,
    ) -> std::io::Result<WaitResult> {
        let (start_raw, first_line) = {
            let st = self.shared.st.lock().unwrap();
            (st.raw.len(), self.transcript.len())
        };
        let target = self.expect_prompt();
        self.write_bytes(format!("{payload}\n").as_bytes())?;
        let end = self.wait_until(target, deadline, halted, crash_settle, first_line);
        let st = self.shared.st.lock().unwrap();
        let mut text = st.raw[start_raw..].to_string();
        if end == WaitEnd::Prompt {
            if let Some(p) = text.rfind(PROMPT_SENTINEL) {
                text.truncate(p);
            }
        }
        Ok(WaitResult { end, text })
    }

    /// Wait for the prompt count to reach `target`.
    pub fn wait_until(
        &self,
        target: u64,
        deadline: Instant,
        halted: &dyn Fn() -> bool,
        crash_settle: Option<Duration>,
        first_line: usize,
    ) -> WaitEnd {
        let tick = Duration::from_millis(10);
        let mut scanned = first_line;
        let mut banner_seen = false;
        let mut st = self.shared.st.lock().unwrap();
        loop {
            if st.prompts >= target {
                return WaitEnd::Prompt;
            }
            if st.eof {
                return WaitEnd::Eof;
            }
            if halted() {
                return WaitEnd::Halted;
            }
            if let Some(settle) = crash_settle {
                if !banner_seen {
                    let new = self.transcript.lines_from(scanned);
                    scanned += new.len();
                    banner_seen = new.iter().any(|l| classify_banner(&l.text).is_some())
                        || classify_banner(&st.pending).is_some();
                }
                if banner_seen && st.last_activity.elapsed() >= settle {
                    return WaitEnd::CrashSettled;
                }
            }
            let now = Instant::now();
            if now >= deadline {
                return WaitEnd::TimedOut;
            }
            st = self.shared.cv.wait_timeout(st, tick.min(deadline - now)).unwrap().0;
        }
    }

    /// Push any unterminated line into the transcript. Only for shutdown:
    /// later bytes would otherwise continue the same line.
    pub fn flush_pending(&self) {
        let mut st = self.shared.st.lock().unwrap();
        let line = std::mem::take(&mut st.pending);
        st.counted_in_pending = 0;
        let text = line.trim_end_matches('\r').replace(PROMPT_SENTINEL, PROMPT_DISPLAY);
        if !text.trim().is_empty() && text.trim() != PROMPT_DISPLAY.trim() {
            self.transcript.push_guest(text);
        }
    }

    /// Close the writer and wait briefly for the drain to observe EOF.
    pub fn close(mut self, wait: Duration) {
        self.writer.lock().unwrap().take();
        if let Some(h) = self.drain.take() {
            let deadline = Instant::now() + wait;
            while !h.is_finished() && Instant::now() < deadline {
                thread::sleep(Duration::from_millis(5));
            }
            if h.is_finished() {
                let _ = h.join();
            }
        }
        self.flush_pending();
    }
}

/// Remove the echoed command line and rewrite sentinels for display.
pub(crate) fn clean_output(raw: &str, command: &str) -> String {
    let text = raw.replace("\r\n", "\n").replace(PROMPT_SENTINEL, PROMPT_DISPLAY);
    let first_cmd_line = command.lines().next().unwrap_or("");
    let body = match text.split_once('\n') {
        Some((first, rest)) if first.trim_end_matches('\r').trim() == first_cmd_line.trim() => rest.to_string(),
        None if text.trim() == first_cmd_line.trim() && !text.is_empty() => String::new(),
        _ => text,
    };
    body.lines().map(|l| l.trim_end_matches('\r')).collect::<Vec<_>>().join("\n")
        + if body.ends_with('\n') { "\n" } else { "" }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_line_recognition() {
        assert!(is_kernel_line("[   12.345678] nf_tables: registered"));
        assert!(is_kernel_line("<4>[    1.000000] x"));
        assert!(is_kernel_line("BUG: KASAN: use-after-free in f"));
        assert!(is_kernel_line("  Call Trace:"));
        assert!(!is_kernel_line("hello [1.0]"));
        assert!(!is_kernel_line("table inet filter {"));
    }

    #[test]
    fn echo_is_stripped() {
        assert_eq!(clean_output("echo hi\nhi\n", "echo hi"), "hi\n");
        assert_eq!(clean_output("echo hi\r\nhi\r\n", "echo hi"), "hi\n");
        assert_eq!(clean_output("hi\n", "echo hi"), "hi\n");
        assert_eq!(clean_output("true\n", "true"), "");
    }

    #[test]
    fn drain_counts_split_sentinels_and_records_lines() {
        let (r, mut w) = std::io::pipe().unwrap();
        let (_ir, iw) = std::io::pipe().unwrap();
        let t = Transcript::new();
        let ch = ConsoleChannel::open(Box::new(r), Box::new(iw), t.clone());
        w.write_all(b"boot\n__REPRO_PRO").unwrap();
        w.flush().unwrap();
        assert!(t.wait_bytes(16, Duration::from_secs(2)));
        assert_eq!(ch.prompts_seen(), 0);
        w.write_all(b"MPT__# echo x\nx\n__REPRO_PROMPT__# \xe2\x82").unwrap();
        w.write_all(b"\xac\n").unwrap();
        drop(w);
        let deadline = Instant::now() + Duration::from_secs(2);
        while !ch.is_eof() && Instant::now() < deadline {
            thread::sleep(Duration::from_millis(5));
        }
        assert_eq!(ch.prompts_seen(), 2);
        let lines: Vec<String> = t.lines_from(0).into_iter().map(|l| l.text).collect();
        assert_eq!(lines, vec!["boot", "# echo x", "x", "# \u{20ac}"]);
    }
}
