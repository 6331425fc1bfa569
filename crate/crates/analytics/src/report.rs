//! Named analyses over one or more run sets, rendered as TSV or JSON with a
//! fixed row order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use patchrepro_core::envprep::VulnType;
use patchrepro_core::toolserver::ToolCategory;
use serde_json::{json, Value};

use crate::convergence::{convergence_curve, RunOutcomes};
use crate::runs::{summarize_runs, Factor, RunRecord};
use crate::stratified::{cmh_test, mantel_haenszel_or, StratifiedTables};
use crate::table::{fisher_exact, ContingencyTable2x2, OddsRatio};
use crate::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Analysis {
    Overall,
    Subsystem,
    Race,
    Type,
    Cutoff,
    CommitMsg,
    Convergence,
}

impl Analysis {
    pub const ALL: [Analysis; 7] = [
        Analysis::Overall,
        Analysis::Subsystem,
        Analysis::Race,
        Analysis::Type,
        Analysis::Cutoff,
        Analysis::CommitMsg,
        Analysis::Convergence,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Analysis::Overall => "overall",
            Analysis::Subsystem => "subsystem",
            Analysis::Race => "race",
            Analysis::Type => "type",
            Analysis::Cutoff => "cutoff",
            Analysis::CommitMsg => "commitmsg",
            Analysis::Convergence => "convergence",
        }
    }
}

impl fmt::Display for Analysis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Analysis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Analysis::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| format!("unknown table `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Tsv,
    Json,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Tsv => "tsv",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tsv" => Ok(Format::Tsv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    /// submissions at or before this instant are pre-cutoff
    pub cutoff: DateTime<Utc>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { cutoff: "2024-09-30T23:59:59Z".parse().expect("valid literal") }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

/// Floats are rounded to six decimals so renderings are stable.
fn num(x: f64) -> Value {
    if x.is_finite() {
        json!((x * 1e6).round() / 1e6)
    } else if x.is_nan() {
        Value::Null
    } else {
        Value::String(if x > 0.0 { "inf".into() } else { "-inf".into() })
    }
}

fn odds(or: OddsRatio) -> Value {
    match or {
        OddsRatio::Finite(v) => num(v),
        OddsRatio::Zero => json!(0.0),
        OddsRatio::Infinite => json!("inf"),
        OddsRatio::Undefined => Value::Null,
    }
}

impl ReportTable {
    fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_tsv(&self) -> String {
        let cell = |v: &Value| match v {
            Value::Null => String::new(),
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let mut out = self.columns.join("\t");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iter().map(cell).collect::<Vec<_>>().join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| Value::Object(self.columns.iter().cloned().zip(r.iter().cloned()).collect()))
            .collect();
        let mut s = serde_json::to_string_pretty(&json!({ "table": self.name, "rows": rows })).expect("json values serialize");
        s.push('\n');
        s
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Tsv => self.to_tsv(),
            Format::Json => self.to_json(),
        }
    }
}

fn rate_table(exposed: &[&RunRecord], other: &[&RunRecord]) -> Option<ContingencyTable2x2> {
    let s = |g: &[&RunRecord]| g.iter().filter(|r| r.success).count() as u64;
    ContingencyTable2x2::from_rates(s(exposed), exposed.len() as u64, s(other), other.len() as u64).ok()
}

fn overall(sets: &[Vec<RunRecord>]) -> Result<ReportTable, StatsError> {
    let mut cols = vec![
        "run_set", "group", "n", "successes", "success_rate", "mean_cost", "max_cost", "mean_time_min",
        "max_time_min", "p50_time_min", "p90_time_min",
    ];
    let tool_cols: Vec<String> = ToolCategory::ALL.iter().map(|c| format!("mean_{}", c.as_str())).collect();
    cols.extend(tool_cols.iter().map(String::as_str));
    cols.push("mean_poc_iterations");
    let mut t = ReportTable::new("overall", &cols);
    for (i, set) in sets.iter().enumerate() {
        for row in summarize_runs(set, &Factor::Outcome, None)? {
            let mut cells = vec![
                json!(i),
                json!(row.group),
                json!(row.count),
                json!(row.successes),
                num(row.success_rate),
                num(row.mean_cost),
                num(row.max_cost),
                num(row.mean_time_min),
                num(row.max_time_min),
                num(row.p50_time_min),
                num(row.p90_time_min),
            ];
            cells.extend(ToolCategory::ALL.iter().map(|c| num(row.tool_means[c])));
            cells.push(num(row.mean_poc_iterations));
            t.push(cells);
        }
    }
    Ok(t)
}

/// Each subsystem against all remaining cases of the same run set.
fn subsystem(sets: &[Vec<RunRecord>]) -> ReportTable {
    let mut t = ReportTable::new(
        "subsystem",
        &["run_set", "subsystem", "successes", "n", "success_rate", "odds_ratio", "p_fisher"],
    );
    for (i, set) in sets.iter().enumerate() {
        let names: BTreeSet<&str> = set.iter().filter_map(|r| r.subsystem.as_deref()).collect();
        for name in names {
            let (inside, outside): (Vec<&RunRecord>, Vec<&RunRecord>) =
                set.iter().partition(|r| r.subsystem.as_deref() == Some(name));
            let s = inside.iter().filter(|r| r.success).count();
            let (or, p) = match rate_table(&inside, &outside) {
                Some(tab) => {
                    let f = fisher_exact(&tab);
                    (odds(f.odds_ratio), num(f.p_two_sided))
                }
                None => (Value::Null, Value::Null),
            };
            t.push(vec![json!(i), json!(name), json!(s), json!(inside.len()), num(s as f64 / inside.len() as f64), or, p]);
        }
    }
    t
}

fn two_group_row(i: usize, label: &str, exposed: &[&RunRecord], other: &[&RunRecord]) -> Vec<Value> {
    let s = |g: &[&RunRecord]| g.iter().filter(|r| r.success).count();
    let (or, p) = match rate_table(exposed, other) {
        Some(tab) => {
            let f = fisher_exact(&tab);
            (odds(f.odds_ratio), num(f.p_two_sided))
        }
        None => (Value::Null, Value::Null),
    };
    vec![
        json!(i),
        json!(label),
        json!(s(exposed)),
        json!(exposed.len()),
        json!(s(other)),
        json!(other.len()),
        or,
        p,
    ]
}

const TWO_GROUP_COLS: [&str; 8] =
    ["run_set", "comparison", "exposed_successes", "exposed_n", "other_successes", "other_n", "odds_ratio", "p_fisher"];

fn race(sets: &[Vec<RunRecord>]) -> ReportTable {
    let mut t = ReportTable::new("race", &TWO_GROUP_COLS);
    for (i, set) in sets.iter().enumerate() {
        let race: Vec<&RunRecord> = set.iter().filter(|r| r.is_race == Some(true)).collect();
        let non: Vec<&RunRecord> = set.iter().filter(|r| r.is_race == Some(false)).collect();
        t.push(two_group_row(i, "race_vs_non_race", &race, &non));
    }
    t
}

fn is_temporal(v: VulnType) -> bool {
    matches!(v, VulnType::UAF | VulnType::DF)
}

/// Temporal (UAF/DF) against spatial (OOB) violations, stratified by race.
/// Cases of any other type are left out.
fn vuln_type(sets: &[Vec<RunRecord>]) -> ReportTable {
    let mut t = ReportTable::new(
        "type",
        &["run_set", "stratum", "a", "b", "c", "d", "odds_ratio", "p_value", "statistic"],
    );
    for (i, set) in sets.iter().enumerate() {
        let mut strata = Vec::new();
        for (label, flag) in [("race", true), ("non_race", false)] {
            let cell = |temporal: bool, success: bool| {
                set.iter()
                    .filter(|r| {
                        r.is_race == Some(flag)
                            && r.vuln_type.is_some_and(|v| v != VulnType::OTHER && is_temporal(v) == temporal)
                            && r.success == success
                    })
                    .count() as u64
            };
            let Ok(tab) = ContingencyTable2x2::new(cell(true, true), cell(true, false), cell(false, true), cell(false, false))
            else {
                continue;
            };
            let f = fisher_exact(&tab);
            t.push(vec![
                json!(i),
                json!(label),
                json!(tab.a),
                json!(tab.b),
                json!(tab.c),
                json!(tab.d),
                odds(f.odds_ratio),
                num(f.p_two_sided),
                Value::Null,
            ]);
            strata.push(tab);
        }
        let Ok(s) = StratifiedTables::new(strata) else { continue };
        let or = mantel_haenszel_or(&s).map(odds).unwrap_or(Value::Null);
        let (p, stat) = match cmh_test(&s) {
            Ok(r) => (num(r.p_two_sided), num(r.statistic)),
            Err(_) => (Value::Null, Value::Null),
        };
        t.push(vec![json!(i), json!("mantel_haenszel"), Value::Null, Value::Null, Value::Null, Value::Null, or, p, stat]);
    }
    t
}

/// Pre- against post-cutoff success, and the race share of each side.
fn cutoff(sets: &[Vec<RunRecord>], cut: DateTime<Utc>) -> ReportTable {
    let mut t = ReportTable::new("cutoff", &TWO_GROUP_COLS);
    for (i, set) in sets.iter().enumerate() {
        let pre: Vec<&RunRecord> = set.iter().filter(|r| r.submit_time.is_some_and(|s| s <= cut)).collect();
        let post: Vec<&RunRecord> = set.iter().filter(|r| r.submit_time.is_some_and(|s| s > cut)).collect();
        t.push(two_group_row(i, "pre_vs_post_success", &pre, &post));

        let races = |g: &[&RunRecord]| g.iter().filter(|r| r.is_race == Some(true)).count() as u64;
        let tab = ContingencyTable2x2::from_rates(races(&post), post.len() as u64, races(&pre), pre.len() as u64);
        let (or, p) = match tab {
            Ok(tab) => {
                let f = fisher_exact(&tab);
                (odds(f.odds_ratio), num(f.p_two_sided))
            }
            Err(_) => (Value::Null, Value::Null),
        };
        t.push(vec![
            json!(i),
            json!("post_vs_pre_race_share"),
            json!(races(&post)),
            json!(post.len()),
            json!(races(&pre)),
            json!(pre.len()),
            or,
            p,
        ]);
    }
    t
}

/// Rates per commit-message level; with two or more run sets, each later set
/// is paired with the first.
fn commit_msg(sets: &[Vec<RunRecord>]) -> Result<ReportTable, StatsError> {
    let mut t = ReportTable::new(
        "commitmsg",
        &["run_set", "level", "n", "successes", "success_rate", "delta_pp", "only_first", "only_second"],
    );
    let Some(first) = sets.first() else { return Ok(t) };
    for row in summarize_runs(first, &Factor::CommitMsgLevel, None)? {
        t.push(vec![
            json!(0),
            json!(row.group),
            json!(row.count),
            json!(row.successes),
            num(row.success_rate),
            Value::Null,
            Value::Null,
            Value::Null,
        ]);
    }
    for (i, set) in sets.iter().enumerate().skip(1) {
        let ids: BTreeSet<&str> = set.iter().map(|r| r.case_id.as_str()).collect();
        let paired_first: Vec<RunRecord> = first.iter().filter(|r| ids.contains(r.case_id.as_str())).cloned().collect();
        if paired_first.is_empty() {
            return Err(StatsError::UnpairedCases);
        }
        // attributes follow the first set; the paired set contributes outcomes
        let by_case: BTreeMap<&str, &RunRecord> = paired_first.iter().map(|r| (r.case_id.as_str(), r)).collect();
        let second: Vec<RunRecord> = set
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if let Some(f) = by_case.get(r.case_id.as_str()) {
                    r.commit_msg_level = f.commit_msg_level;
                }
                r
            })
            .collect();
        for row in summarize_runs(&paired_first, &Factor::CommitMsgLevel, Some(&second))? {
            let d = row.paired.expect("paired rows carry a delta");
            t.push(vec![
                json!(i),
                json!(row.group),
                json!(d.n),
                json!(d.second_successes),
                num(d.second_successes as f64 / d.n as f64),
                num(d.delta_pp),
                json!(d.only_first),
                json!(d.only_second),
            ]);
        }
    }
    Ok(t)
}

fn convergence(sets: &[Vec<RunRecord>]) -> Result<ReportTable, StatsError> {
    let mut t = ReportTable::new("convergence", &["runs", "executed", "successes", "cumulative_successes", "universe"]);
    let outcomes: Vec<RunOutcomes> =
        sets.iter().map(|s| RunOutcomes::from_pairs(s.iter().map(|r| (r.case_id.clone(), r.success)))).collect();
    let curve = convergence_curve(&outcomes)?;
    let universe = outcomes[0].executed.len();
    for (k, (o, c)) in outcomes.iter().zip(curve).enumerate() {
        t.push(vec![json!(k + 1), json!(o.executed.len()), json!(o.succeeded.len()), json!(c), json!(universe)]);
    }
    Ok(t)
}

/// Build one analysis table. `sets` are run sets in command-line order.
pub fn build_table(analysis: Analysis, sets: &[Vec<RunRecord>], opts: &ReportOptions) -> Result<ReportTable, StatsError> {
    if sets.is_empty() {
        return Err(StatsError::EmptyGroup);
    }
    match analysis {
        Analysis::Overall => overall(sets),
        Analysis::Subsystem => Ok(subsystem(sets)),
        Analysis::Race => Ok(race(sets)),
        Analysis::Type => Ok(vuln_type(sets)),
        Analysis::Cutoff => Ok(cutoff(sets, opts.cutoff)),
        Analysis::CommitMsg => commit_msg(sets),
        Analysis::Convergence => convergence(sets),
    }
}
