//! Repeated preparation and scripted runs produce identical outputs apart
//! from timing.

mod common;

use std::time::Duration;

use common::{fix_repo, prepare, run};
use patchrepro_core::profile::ProfileId;
use patchrepro_core::sessionrunner::Termination;
use patchrepro_core::trace::{read_jsonl, timing_free};

#[test]
fn two_preparations_share_a_content_digest() {
    let repo = fix_repo();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = prepare(&repo, "crash", ProfileId::Baseline, a.path());
    let pb = prepare(&repo, "crash", ProfileId::Baseline, b.path());
    assert_eq!(pa.env.content_digest, pb.env.content_digest);
    assert_eq!(pa.task, pb.task);
}

#[test]
fn scripted_runs_yield_identical_traces() {
    let repo = fix_repo();
    let mut traces = Vec::new();
    let mut dirs = Vec::new();
    for _ in 0..2 {
        let root = tempfile::tempdir().unwrap();
        let p = prepare(&repo, "crash", ProfileId::Baseline, &root.path().join("work"));
        let art = run(&p, "inspect_only", &root.path().join("session"), Duration::from_secs(120));
        traces.push(timing_free(&read_jsonl(&art.trace).unwrap()));
        dirs.push(root);
    }
    assert!(!traces[0].is_empty());
    assert_eq!(traces[0].len(), traces[1].len());
    for (a, b) in traces[0].iter().zip(&traces[1]) {
        assert_eq!(a, b);
    }
}

#[test]
fn wall_clock_budget_ends_a_looping_session() {
    let repo = fix_repo();
    let root = tempfile::tempdir().unwrap();
    let p = prepare(&repo, "crash", ProfileId::Baseline, &root.path().join("work"));
    let art = run(&p, "spin", &root.path().join("session"), Duration::from_secs(3));
    assert_eq!(art.record.termination, Termination::BudgetExhausted);
    assert!(art.poc.is_none());
    assert!(art.record.elapsed_ms < 30_000);
}
