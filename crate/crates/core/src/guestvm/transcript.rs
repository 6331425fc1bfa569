//! Append-only console transcript shared across guest restarts.

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineOrigin {
    Guest,
    /// marker lines written by the harness (starts, restarts)
    Harness,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub index: usize,
    pub t_ms: u64,
    pub origin: LineOrigin,
    pub text: String,
}

#[derive(Debug, Default)]
struct Inner {
    lines: Vec<TranscriptLine>,
    /// console bytes consumed by the drain so far, across restarts
    bytes: u64,
}

#[derive(Debug, Clone)]
pub struct Transcript {
    inner: Arc<(Mutex<Inner>, Condvar)>,
    start: Instant,
}

impl Default for Transcript {
    fn default() -> Self {
        Self::new()
    }
}

impl Transcript {
    pub fn new() -> Self {
        Self::starting_at(Instant::now())
    }

    pub fn starting_at(start: Instant) -> Self {
        Self { inner: Arc::new((Mutex::new(Inner::default()), Condvar::new())), start }
    }

    fn push(&self, origin: LineOrigin, text: String) -> usize {
        let (lock, cv) = &*self.inner;
        let mut g = lock.lock().unwrap();
        let index = g.lines.len();
        g.lines.push(TranscriptLine { index, t_ms: self.start.elapsed().as_millis() as u64, origin, text });
        cv.notify_all();
        index
    }

    pub fn push_guest(&self, text: impl Into<String>) -> usize {
        self.push(LineOrigin::Guest, text.into())
    }

    pub fn push_harness(&self, text: impl Into<String>) -> usize {
        self.push(LineOrigin::Harness, format!("[harness] {}", text.into()))
    }

    /// Number of completed lines; used as a position mark.
    pub fn len(&self) -> usize {
        self.inner.0.lock().unwrap().lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lines_from(&self, start: usize) -> Vec<TranscriptLine> {
        let g = self.inner.0.lock().unwrap();
        g.lines.get(start..).map(<[_]>::to_vec).unwrap_or_default()
    }

    pub(crate) fn add_bytes(&self, n: u64) {
        let (lock, cv) = &*self.inner;
        lock.lock().unwrap().bytes += n;
        cv.notify_all();
    }

    pub fn bytes(&self) -> u64 {
        self.inner.0.lock().unwrap().bytes
    }

    /// Block until at least `n` console bytes have been consumed.
    pub fn wait_bytes(&self, n: u64, timeout: Duration) -> bool {
        let (lock, cv) = &*self.inner;
        let g = lock.lock().unwrap();
        let (g, _) = cv.wait_timeout_while(g, timeout, |g| g.bytes < n).unwrap();
        g.bytes >= n
    }

    /// `console.log` form: one line per transcript line.
    pub fn render(&self) -> String {
        let g = self.inner.0.lock().unwrap();
        let mut out = String::new();
        for l in &g.lines {
            out.push_str(&l.text);
            out.push('\n');
        }
        out
    }
}
