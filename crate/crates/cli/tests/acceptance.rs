//! Acceptance run: one PASS/FAIL line per criterion, with the pinned
//! tolerances and time limits. Exits nonzero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::sync::LazyLock;
use std::time::{Duration, Instant};

use common::gate_model::{Harness, Op, STOP_RESUME_CYCLE};
use common::{fix_message, fix_repo, fixtures, prepare, run, run_case, FixRepo};
use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::One;
use patchrepro_analytics::{
    cmh_test, convergence_curve, expected_overall_time, fisher_exact, fisher_p_rational, mantel_haenszel_or,
    rational_to_f64, summarize_runs, ContingencyTable2x2, Factor, RunOutcomes, RunRecord, StratifiedTables,
};
use patchrepro_core::envprep::CommitMsgLevel;
use patchrepro_core::kdbg::{parse_mi_record, serialize_mi_record, MiLine};
use patchrepro_core::profile::{ProfileId, DEFAULT_BLOCKED_UTILITIES};
use patchrepro_core::sessionrunner::artifact;
use patchrepro_core::trace::{read_jsonl, timing_free, EventBody, LifecycleEvent};
use patchrepro_core::verdict::{decide, parse_crash_reports, CrashClass, Reason};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Deserialize;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

static REPO: LazyLock<FixRepo> = LazyLock::new(fix_repo);

fn close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol
}

fn printed(v: f64, digits: i32) -> f64 {
    let m = 10f64.powi(digits);
    (v * m).round() / m
}

fn rates(es: u64, et: u64, os: u64, ot: u64) -> ContingencyTable2x2 {
    ContingencyTable2x2::from_rates(es, et, os, ot).expect("valid rates")
}

fn paired(prefix: &str, level: CommitMsgLevel, n: usize, s1: usize, b: usize, c: usize) -> (Vec<RunRecord>, Vec<RunRecord>) {
    (0..n)
        .map(|i| {
            let id = format!("{prefix}-{i:03}");
            let first = i < s1;
            let second = if first { i >= b } else { i < s1 + c };
            let mut x = RunRecord::new(id.clone(), first, 10.0, 1.0);
            let mut y = RunRecord::new(id, second, 10.0, 1.0);
            x.commit_msg_level = Some(level);
            y.commit_msg_level = Some(level);
            (x, y)
        })
        .unzip()
}

fn statistical_goldens() -> Outcome {
    let mut checked = 0;
    // subsystem rows: exposed success/total against the rest
    let rows: [(&str, (u64, u64, u64, u64), f64, f64); 8] = [
        ("medium/net", (24, 50, 23, 50), 1.08, 1.000),
        ("medium/netfilter", (14, 34, 33, 66), 0.70, 0.526),
        ("medium/bpf", (4, 7, 43, 93), 1.55, 0.703),
        ("medium/others", (5, 9, 42, 91), 1.46, 0.731),
        ("xhigh/net", (28, 50, 28, 50), 1.00, 1.000),
        ("xhigh/netfilter", (18, 34, 38, 66), 0.83, 0.676),
        ("xhigh/bpf", (4, 7, 52, 93), 1.05, 1.000),
        ("xhigh/others", (6, 9, 50, 91), 1.64, 0.727),
    ];
    for (label, (a, b, c, d), or, p) in rows {
        let f = fisher_exact(&rates(a, b, c, d));
        ensure!(printed(f.odds_ratio.value(), 2) == or, "{label}: OR {} != {or}", f.odds_ratio.value());
        ensure!(close(f.p_two_sided, p, 0.02), "{label}: p {} vs {p} (tol 0.02)", f.p_two_sided);
        checked += 2;
    }

    // type effect stratified by race: UAF/DF (S, F) then OOB (S, F)
    for (label, race, other, or, p) in [
        ("medium", [4, 18, 1, 0], [29, 31, 13, 2], 0.13, 0.002),
        ("xhigh", [6, 16, 1, 0], [36, 24, 13, 2], 0.20, 0.023),
    ] {
        let t = |x: [u64; 4]| ContingencyTable2x2::new(x[0], x[1], x[2], x[3]).unwrap();
        let strata = StratifiedTables::new(vec![t(race), t(other)]).unwrap();
        let mh = mantel_haenszel_or(&strata).map_err(|e| e.to_string())?.value();
        let cmh = cmh_test(&strata).map_err(|e| e.to_string())?.p_two_sided;
        ensure!(close(mh, or, 0.005), "{label}: MH OR {mh} vs {or} (tol 0.005)");
        ensure!(close(cmh, p, 0.005), "{label}: CMH p {cmh} vs {p} (tol 0.005)");
        checked += 2;
    }

    // knowledge cutoff, then the race share on either side of it
    for (label, t, or, p) in [
        ("cutoff/medium", rates(28, 58, 19, 42), 1.13, 0.84),
        ("cutoff/xhigh", rates(34, 58, 22, 42), 1.29, 0.55),
        ("race balance", rates(10, 42, 14, 58), 0.98, 1.00),
    ] {
        let f = fisher_exact(&t);
        ensure!(close(f.odds_ratio.value(), or, 0.005), "{label}: OR {} vs {or} (tol 0.005)", f.odds_ratio.value());
        ensure!(close(f.p_two_sided, p, 0.02), "{label}: p {} vs {p} (tol 0.02)", f.p_two_sided);
        checked += 2;
    }

    let hours = expected_overall_time(&[11.74; 42], 58, 24.0).map_err(|e| e.to_string())?;
    ensure!(close(hours, 18.85, 0.01), "expected overall time {hours} vs 18.85 (tol 0.01)");
    checked += 1;

    use CommitMsgLevel::{L1, L2, L3};
    let deltas: [(&str, [(CommitMsgLevel, usize, usize, usize, usize, f64); 3]); 2] = [
        ("xhigh", [(L1, 13, 6, 1, 1, 0.0), (L2, 79, 44, 19, 4, -19.0), (L3, 8, 6, 3, 1, -25.0)]),
        ("medium", [(L1, 13, 3, 0, 1, 7.7), (L2, 79, 38, 16, 6, -12.7), (L3, 8, 6, 2, 0, -25.0)]),
    ];
    for (model, cells) in deltas {
        let (mut with, mut without) = (Vec::new(), Vec::new());
        for (level, n, s1, b, c, _) in cells {
            let (x, y) = paired(&format!("{model}-{}", level.as_u8()), level, n, s1, b, c);
            with.extend(x);
            without.extend(y);
        }
        let rows = summarize_runs(&with, &Factor::CommitMsgLevel, Some(&without)).map_err(|e| e.to_string())?;
        for ((_, _, _, b, c, delta), row) in cells.into_iter().zip(&rows) {
            let p = row.paired.ok_or("missing paired delta")?;
            ensure!((p.only_first, p.only_second) == (b, c), "{model} {}: b/c {}/{}", row.group, p.only_first, p.only_second);
            ensure!(printed(p.delta_pp, 1) == delta, "{model} {}: delta {} vs {delta}", row.group, p.delta_pp);
            checked += 1;
        }
    }

    let ids: Vec<String> = (0..100).map(|i| format!("case-{i:03}")).collect();
    let set = |f: &dyn Fn(usize) -> Option<bool>| {
        RunOutcomes::from_pairs(ids.iter().enumerate().filter_map(|(i, id)| f(i).map(|ok| (id.clone(), ok))))
    };
    let curve = convergence_curve(&[
        set(&|i| Some(i < 56)),
        set(&|i| Some((11..63).contains(&i))),
        set(&|i| (i >= 63).then_some(i == 63)),
    ])
    .map_err(|e| e.to_string())?;
    ensure!(curve == [56, 63, 64], "convergence {curve:?}");
    checked += 1;
    Ok(format!("{checked} published values within tolerance"))
}

fn factorial(n: u64) -> BigUint {
    (1..=n).fold(BigUint::one(), |acc, k| acc * k)
}

fn hypergeometric(a: u64, b: u64, c: u64, d: u64) -> BigRational {
    let num = factorial(a + b) * factorial(c + d) * factorial(a + c) * factorial(b + d);
    let den = factorial(a + b + c + d) * factorial(a) * factorial(b) * factorial(c) * factorial(d);
    BigRational::new(num.into(), den.into())
}

fn enumerated_p(t: &ContingencyTable2x2) -> BigRational {
    let (r1, r2, c1) = (t.a + t.b, t.c + t.d, t.a + t.c);
    let bound = hypergeometric(t.a, t.b, t.c, t.d) * BigRational::new(10_000_001u64.into(), 10_000_000u64.into());
    (0..=r1.min(c1))
        .filter(|&a| c1 - a <= r2)
        .map(|a| hypergeometric(a, r1 - a, c1 - a, r2 - (c1 - a)))
        .filter(|q| *q <= bound)
        .fold(BigRational::new(0.into(), 1.into()), |acc, q| acc + q)
}

fn fisher_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_f15e);
    let mut tested = 0;
    while tested < 1000 {
        let mut cells = [0u64; 4];
        for _ in 0..rng.gen_range(1..=30) {
            cells[rng.gen_range(0..4)] += 1;
        }
        let t = ContingencyTable2x2::new(cells[0], cells[1], cells[2], cells[3]).unwrap();
        if t.has_degenerate_margin() {
            continue;
        }
        let want = enumerated_p(&t);
        ensure!(fisher_p_rational(&t) == want, "{t:?}: exact p differs");
        ensure!(fisher_exact(&t).p_two_sided == rational_to_f64(&want), "{t:?}: float p differs");
        tested += 1;
    }
    Ok(format!("{tested} tables with n <= 30 equal exhaustive enumeration exactly"))
}

fn pipeline() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let case = |scen: &str, script: &str, dir: &str| run_case(&REPO, scen, script, ProfileId::Baseline, &root.path().join(dir));

    let (_, v, _) = case("crash", "crash", "crash");
    let class = v.crashes.first().map(|c| c.class);
    ensure!(v.success && class == Some(CrashClass::UAF), "crash scenario: {v:?}");
    let (_, v, _) = case("cheat", "cheat", "cheat");
    ensure!(!v.success && v.reason == Reason::Cheat, "cheat scenario: {v:?}");
    let (_, v, _) = case("no_crash", "crash", "quiet");
    ensure!(!v.success && v.reason == Reason::NoCrash, "no-crash scenario: {v:?}");
    let (art, _, task) = case("crash", "crash", "no_report");
    fs::remove_file(art.dir.join(artifact::REPORT)).unwrap();
    let v = decide(&art.dir, &task).map_err(|e| e.to_string())?;
    ensure!(!v.success && v.reason == Reason::MissingReport, "missing report: {v:?}");
    Ok("crash=success(UAF) cheat=fail(cheat) no_crash=fail(no_crash) missing=fail(missing_report)".into())
}

fn random_op(rng: &mut StdRng) -> Op {
    match rng.gen_range(0..11) {
        0..=2 => Op::Exec(rng.gen_range(0..3)),
        3 => Op::Upload,
        4 => Op::Interrupt,
        5 | 6 => Op::SetBreak(rng.gen_range(0..3)),
        7 => Op::ClearBreaks,
        8 | 9 => Op::Resume,
        _ => Op::Registers,
    }
}

fn gate() -> Outcome {
    let mut rng = StdRng::seed_from_u64(4);
    let mut sequences: Vec<Vec<Op>> = vec![STOP_RESUME_CYCLE.to_vec()];
    for _ in 0..48 {
        let len = rng.gen_range(4..16);
        sequences.push((0..len).map(|_| random_op(&mut rng)).collect());
    }
    let (mut calls, mut refusals) = (0, 0);
    for ops in &sequences {
        let work = tempfile::tempdir().unwrap();
        let mut h = Harness::new(prepare(&REPO, "no_crash", ProfileId::Baseline, work.path()));
        for op in ops {
            h.step(op);
        }
        h.check_trace();
        calls += h.log.len();
        refusals += h.log.iter().filter(|l| l.contains("DebuggeeHalted")).count();
    }
    ensure!(refusals > 0, "no interleaving reached a stop");
    Ok(format!("{} interleavings, {calls} calls, {refusals} refusals, 0 false admits/denies", sequences.len()))
}

fn mi_corpus() -> Outcome {
    let dir = fixtures().join("mi");
    let mut files: Vec<_> =
        fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|x| x == "mi")).collect();
    files.sort();
    let mut lines = 0;
    for f in &files {
        for line in fs::read_to_string(f).unwrap().lines().filter(|l| !l.is_empty()) {
            let parsed = parse_mi_record(line).map_err(|e| format!("{}: {e}", f.display()))?;
            if let MiLine::Record(rec) = parsed {
                let wire = serialize_mi_record(&rec);
                let again = parse_mi_record(&wire).map_err(|e| format!("reparse {wire}: {e}"))?;
                ensure!(again == MiLine::Record(rec), "round trip changed `{line}`");
            }
            lines += 1;
        }
    }
    let malformed = fs::read_to_string(dir.join("malformed.txt")).unwrap();
    let bad: Vec<&str> = malformed.lines().filter(|l| !l.is_empty()).collect();
    ensure!(bad.len() == 3, "{} malformed fixtures", bad.len());
    for line in &bad {
        ensure!(parse_mi_record(line).is_err(), "accepted malformed `{line}`");
    }
    Ok(format!("{lines}/{lines} lines in {} transcripts parse and round-trip; 3/3 malformed rejected", files.len()))
}

#[derive(Deserialize)]
struct Label {
    file: String,
    crashes: Vec<LabelledCrash>,
}

#[derive(Deserialize)]
struct LabelledCrash {
    class: CrashClass,
    function: Option<String>,
}

fn crash_corpus() -> Outcome {
    let dir = fixtures().join("crashes");
    let labels: Vec<Label> = serde_json::from_str(&fs::read_to_string(dir.join("labels.json")).unwrap()).unwrap();
    let (mut blocks, mut quiet) = (0, 0);
    for label in &labels {
        let got = parse_crash_reports(&fs::read_to_string(dir.join(&label.file)).unwrap());
        let got: Vec<_> = got.iter().map(|c| (c.class, c.crash_function.clone())).collect();
        let want: Vec<_> = label.crashes.iter().map(|c| (c.class, c.function.clone())).collect();
        ensure!(got == want, "{}: {got:?} vs {want:?}", label.file);
        blocks += want.len();
        quiet += usize::from(want.is_empty());
    }
    ensure!(blocks >= 20, "only {blocks} labelled blocks");
    let warning = parse_crash_reports(&fs::read_to_string(dir.join("warning_only.txt")).unwrap());
    ensure!(warning.is_empty(), "warning-only log yields {} crashes", warning.len());
    Ok(format!("{blocks} blocks in {} files agree with labels; {quiet} crash-free logs yield none", labels.len()))
}

fn ablations() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let session = |profile: ProfileId, script: &str| run_case(&REPO, "crash", script, profile, &root.path().join(profile.as_str()));

    let (art, _, _) = session(ProfileId::NoGdb, "ablation_probe");
    let events = read_jsonl(&art.trace).map_err(|e| e.to_string())?;
    let filtered = events
        .iter()
        .filter(|e| match &e.body {
            EventBody::ToolCall { tool, .. } | EventBody::ToolResult { tool, .. } => tool.starts_with("dbg."),
            EventBody::Lifecycle(l) => matches!(l, LifecycleEvent::GateStopped { .. } | LifecycleEvent::GateRunning { .. }),
            _ => false,
        })
        .count();
    ensure!(filtered == 0, "no_gdb: {filtered} debugger events");

    let (art, _, _) = session(ProfileId::NoUtils, "ablation_probe");
    let events = read_jsonl(&art.trace).map_err(|e| e.to_string())?;
    let (mut attempts, mut successes) = (0, 0);
    for e in &events {
        let EventBody::ToolResult { call_seq, tool, result, .. } = &e.body else { continue };
        let call = events.iter().find(|c| c.seq == *call_seq).map(|c| &c.body);
        let (Some(EventBody::ToolCall { args, .. }), "vm.exec") = (call, tool.as_str()) else { continue };
        let head = args["command"].as_str().unwrap_or_default().split_whitespace().next().unwrap_or_default();
        if DEFAULT_BLOCKED_UTILITIES.contains(&head) {
            attempts += 1;
            successes += usize::from(!result.to_string().contains("not found"));
        }
    }
    ensure!(attempts > 0 && successes == 0, "no_utils: {successes}/{attempts} blocked utilities ran");

    let (art, _, _) = session(ProfileId::NoCommitMessage, "crash");
    let seen = fs::read_to_string(art.dir.join(artifact::PROMPTS)).unwrap() + &fs::read_to_string(&art.trace).unwrap();
    let message = fix_message();
    let leaked: BTreeSet<&str> = message.lines().map(str::trim).filter(|l| l.len() > 20 && seen.contains(*l)).collect();
    ensure!(leaked.is_empty(), "no_commit_message leaks {leaked:?}");
    Ok(format!("no_gdb 0 debugger events; no_utils 0/{attempts} blocked invocations ran; no_commit_message 0 leaked lines"))
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut traces = Vec::new();
    let mut digests = Vec::new();
    for i in 0..2 {
        let dir = root.path().join(i.to_string());
        let p = prepare(&REPO, "crash", ProfileId::Baseline, &dir.join("work"));
        digests.push(p.env.content_digest.clone());
        let art = run(&p, "inspect_only", &dir.join("session"), Duration::from_secs(120));
        traces.push(timing_free(&read_jsonl(&art.trace).map_err(|e| e.to_string())?));
    }
    ensure!(digests[0] == digests[1], "content digests differ: {digests:?}");
    ensure!(!traces[0].is_empty() && traces[0] == traces[1], "traces differ modulo timestamps");
    Ok(format!("{} trace events identical modulo timestamps; digest {}", traces[0].len(), &digests[0][..16]))
}

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    check: fn() -> Outcome,
}

fn criteria() -> [Criterion; 8] {
    let secs = |s| Some(Duration::from_secs(s));
    [
        Criterion { name: "statistical golden tables", limit: secs(5), check: statistical_goldens },
        Criterion { name: "Fisher brute-force oracle", limit: secs(60), check: fisher_oracle },
        Criterion { name: "end-to-end mock pipeline", limit: secs(10), check: pipeline },
        Criterion { name: "breakpoint gate invariant", limit: None, check: gate },
        Criterion { name: "MI parser corpus", limit: None, check: mi_corpus },
        Criterion { name: "crash parser corpus", limit: None, check: crash_corpus },
        Criterion { name: "ablation soundness", limit: None, check: ablations },
        Criterion { name: "determinism", limit: None, check: determinism },
    ]
}

fn panic_text(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

fn main() -> ExitCode {
    // The fixture repository is built once, outside any timed criterion.
    let _ = Path::new(REPO.path());
    panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (i, c) in criteria().into_iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| Err(panic_text(p)));
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {}: {detail} [{:.2}s]", i + 1, c.name, elapsed.as_secs_f64()),
            Err(why) => {
                failures += 1;
                println!("FAIL criterion {}: {}: {why} [{:.2}s]", i + 1, c.name, elapsed.as_secs_f64());
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
