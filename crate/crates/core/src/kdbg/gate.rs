//! The breakpoint gate: closed while the debuggee is stopped, during which
//! guest interaction tools are refused.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::guestvm::Transcript;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum GateStatus {
    Running,
    StoppedBreakpoint { bp_id: u32 },
    StoppedOther { reason: String },
}

impl GateStatus {
    pub fn is_stopped(&self) -> bool {
        !matches!(self, GateStatus::Running)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateTransition {
    /// stop episode this transition opens or closes
    pub episode: u64,
    pub status: GateStatus,
    /// transcript length when the transition was observed
    pub console_mark: usize,
}

#[derive(Debug)]
struct State {
    status: GateStatus,
    episode: u64,
    log: Vec<GateTransition>,
}

#[derive(Debug)]
struct Inner {
    stopped: AtomicBool,
    state: Mutex<State>,
    cv: Condvar,
    transcript: Transcript,
}

/// Shared gate flag. Written only by the debugger session, read by guest
/// interaction operations.
#[derive(Debug, Clone)]
pub struct DebugGate {
    inner: Arc<Inner>,
}

impl DebugGate {
    pub fn new(transcript: Transcript) -> Self {
        Self {
            inner: Arc::new(Inner {
                stopped: AtomicBool::new(false),
                state: Mutex::new(State { status: GateStatus::Running, episode: 0, log: Vec::new() }),
                cv: Condvar::new(),
                transcript,
            }),
        }
    }

    pub fn is_stopped(&self) -> bool {
        self.inner.stopped.load(Ordering::SeqCst)
    }

    pub fn status(&self) -> GateStatus {
        self.inner.state.lock().unwrap().status.clone()
    }

    /// Episode number while stopped; episodes count from 1.
    pub fn current_episode(&self) -> Option<u64> {
        let s = self.inner.state.lock().unwrap();
        s.status.is_stopped().then_some(s.episode)
    }

    /// Breakpoint id of the current stop, if it was a breakpoint hit.
    pub fn current_breakpoint(&self) -> Option<u32> {
        match self.inner.state.lock().unwrap().status {
            GateStatus::StoppedBreakpoint { bp_id } => Some(bp_id),
            _ => None,
        }
    }

    pub(crate) fn on_stopped(&self, status: GateStatus) {
        debug_assert!(status.is_stopped());
        let mut s = self.inner.state.lock().unwrap();
        s.episode += 1;
        let mark = self.inner.transcript.len();
        let episode = s.episode;
        s.log.push(GateTransition { episode, status: status.clone(), console_mark: mark });
        s.status = status;
        self.inner.stopped.store(true, Ordering::SeqCst);
        self.inner.cv.notify_all();
    }

    pub(crate) fn on_running(&self) {
        let mut s = self.inner.state.lock().unwrap();
        if !s.status.is_stopped() {
            return;
        }
        let mark = self.inner.transcript.len();
        let episode = s.episode;
        s.log.push(GateTransition { episode, status: GateStatus::Running, console_mark: mark });
        s.status = GateStatus::Running;
        self.inner.stopped.store(false, Ordering::SeqCst);
        self.inner.cv.notify_all();
    }

    pub fn transition_count(&self) -> usize {
        self.inner.state.lock().unwrap().log.len()
    }

    pub fn transitions_since(&self, start: usize) -> Vec<GateTransition> {
        let s = self.inner.state.lock().unwrap();
        s.log.get(start..).map(<[_]>::to_vec).unwrap_or_default()
    }

    pub fn wait_running(&self, timeout: Duration) -> bool {
        let s = self.inner.state.lock().unwrap();
        let (s, _) = self.inner.cv.wait_timeout_while(s, timeout, |s| s.status.is_stopped()).unwrap();
        !s.status.is_stopped()
    }

    pub fn wait_stopped(&self, timeout: Duration) -> bool {
        let s = self.inner.state.lock().unwrap();
        let (s, _) = self.inner.cv.wait_timeout_while(s, timeout, |s| !s.status.is_stopped()).unwrap();
        s.status.is_stopped()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn episodes_and_marks() {
        let t = Transcript::new();
        let g = DebugGate::new(t.clone());
        assert!(!g.is_stopped());
        t.push_guest("x");
        g.on_stopped(GateStatus::StoppedBreakpoint { bp_id: 2 });
        assert!(g.is_stopped());
        assert_eq!(g.current_episode(), Some(1));
        assert_eq!(g.current_breakpoint(), Some(2));
        t.push_guest("y");
        g.on_running();
        g.on_running();
        let log = g.transitions_since(0);
        assert_eq!(log.len(), 2);
        assert_eq!((log[0].episode, log[0].console_mark), (1, 1));
        assert_eq!((log[1].episode, log[1].console_mark, log[1].status.clone()), (1, 2, GateStatus::Running));
        assert_eq!(g.current_episode(), None);
    }
}
