use std::fs;
use std::path::Path;

use patchrepro_analytics::{build_table, load_run_set, Analysis, Format, IngestError, ReportOptions};
use serde_json::{json, Value};

fn write_run(root: &Path, case: &str, success: bool, minutes: f64, cost: f64) {
    let dir = root.join(case);
    fs::create_dir_all(&dir).unwrap();
    let v = json!({
        "case_id": case,
        "success": success,
        "reason": if success { "crashed" } else { "no_crash" },
        "crash": null,
        "cheat_flags": [],
        "elapsed_min": minutes,
        "cost_usd": cost,
    });
    fs::write(dir.join("verdict.json"), v.to_string()).unwrap();
}

fn sidecar(cases: usize) -> Value {
    let subsystems = ["net", "netfilter", "bpf", "fs"];
    let types = ["UAF", "OOB", "DF", "OTHER"];
    Value::Array(
        (0..cases)
            .map(|i| {
                json!({
                    "case_id": format!("case{i:02}"),
                    "commit": format!("{:040x}", 0xabc0000 + i),
                    "subsystem": subsystems[i % 4],
                    "is_race": i % 3 == 0,
                    "vuln_type": types[i % 4],
                    "commit_msg_level": 1 + (i % 3),
                    "submit_time": if i % 2 == 0 { "2024-03-01T00:00:00Z" } else { "2024-12-01T00:00:00Z" },
                })
            })
            .collect(),
    )
}

/// Two run sets over twelve cases; the second succeeds on a superset.
fn run_sets(root: &Path) -> Vec<Vec<patchrepro_analytics::RunRecord>> {
    let mut sets = Vec::new();
    for k in 0..2u32 {
        let dir = root.join(format!("set{k}"));
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("cases.json"), sidecar(12).to_string()).unwrap();
        for i in 0..12 {
            let ok = i % (3 - k as usize) == 0;
            write_run(&dir, &format!("case{i:02}"), ok, 5.0 + i as f64, 0.5 * (i + 1) as f64);
        }
        sets.push(load_run_set(&dir, k, None).unwrap().records);
    }
    sets
}

#[test]
fn sidecar_attributes_reach_the_records() {
    let tmp = tempfile::tempdir().unwrap();
    let sets = run_sets(tmp.path());
    let r = &sets[0][5];
    assert_eq!(r.case_id, "case05");
    assert_eq!(r.subsystem.as_deref(), Some("netfilter"));
    assert_eq!(r.is_race, Some(false));
    assert_eq!(r.commit_msg_level.map(|l| l.as_u8()), Some(3));
    assert_eq!(r.run_index, 0);
    assert_eq!(sets[1][0].run_index, 1);
    assert!(sets.iter().all(|s| s.len() == 12));
}

#[test]
fn every_analysis_renders_consistently() {
    let tmp = tempfile::tempdir().unwrap();
    let sets = run_sets(tmp.path());
    let opts = ReportOptions::default();
    for a in Analysis::ALL {
        let t = build_table(a, &sets, &opts).unwrap_or_else(|e| panic!("{a}: {e}"));
        assert!(!t.rows.is_empty(), "{a}");
        let tsv = t.render(Format::Tsv);
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), t.rows.len() + 1, "{a}");
        assert!(lines.iter().all(|l| l.split('\t').count() == t.columns.len()), "{a}");
        let parsed: Value = serde_json::from_str(&t.render(Format::Json)).unwrap();
        assert_eq!(parsed["table"], a.as_str());
        assert_eq!(parsed["rows"].as_array().unwrap().len(), t.rows.len());
        // rebuilding from the same input yields byte-identical output
        assert_eq!(build_table(a, &sets, &opts).unwrap().render(Format::Json), t.render(Format::Json));
    }
}

#[test]
fn overall_counts_match_the_run_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let sets = run_sets(tmp.path());
    let t = build_table(Analysis::Overall, &sets, &ReportOptions::default()).unwrap();
    let col = |name: &str| t.columns.iter().position(|c| c == name).unwrap();
    let all: Vec<_> = t.rows.iter().filter(|r| r[col("group")] == "all").collect();
    assert_eq!(all.len(), 2);
    assert_eq!(all[0][col("n")], 12);
    assert_eq!(all[0][col("successes")], 4);
    assert_eq!(all[1][col("successes")], 6);
}

#[test]
fn convergence_accumulates_across_sets() {
    let tmp = tempfile::tempdir().unwrap();
    let sets = run_sets(tmp.path());
    let t = build_table(Analysis::Convergence, &sets, &ReportOptions::default()).unwrap();
    let last = t.rows.last().unwrap();
    let cumulative = t.columns.iter().position(|c| c.contains("cumulative")).unwrap();
    // set 0 succeeds on multiples of 3, set 1 on even cases: union is 8
    assert_eq!(last[cumulative], 8);
}

#[test]
fn explicit_sidecar_overrides_the_default() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("runs");
    write_run(&dir, "case00", true, 1.0, 1.0);
    let other = tmp.path().join("meta.json");
    let mut meta = sidecar(1);
    meta[0]["subsystem"] = json!("sound");
    fs::write(&other, meta.to_string()).unwrap();
    fs::write(dir.join("cases.json"), sidecar(1).to_string()).unwrap();
    let set = load_run_set(&dir, 0, Some(&other)).unwrap();
    assert_eq!(set.records[0].subsystem.as_deref(), Some("sound"));
}

#[test]
fn bad_inputs_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(load_run_set(tmp.path(), 0, None), Err(IngestError::Empty(_))));
    let bad = tmp.path().join("broken");
    fs::create_dir_all(&bad).unwrap();
    fs::write(bad.join("verdict.json"), "{\"case_id\": 3}").unwrap();
    assert!(matches!(load_run_set(tmp.path(), 0, None), Err(IngestError::Malformed { .. })));
}
