//! Per-run records and the descriptive summaries built from them.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use patchrepro_core::envprep::{CommitMsgLevel, VulnType};
use patchrepro_core::profile::ProfileId;
use patchrepro_core::toolserver::ToolCategory;
use serde::{Deserialize, Serialize};

use crate::StatsError;

/// One case × one run, as ingested from a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub case_id: String,
    pub model_label: String,
    pub profile: ProfileId,
    pub run_index: u32,
    pub success: bool,
    pub elapsed_min: f64,
    pub cost: f64,
    #[serde(default)]
    pub tool_counts: BTreeMap<ToolCategory, u64>,
    #[serde(default)]
    pub poc_iterations: u64,
    #[serde(default)]
    pub breakpoints_set: u64,
    #[serde(default)]
    pub breakpoints_hit: u64,
    #[serde(default)]
    pub subsystem: Option<String>,
    #[serde(default)]
    pub is_race: Option<bool>,
    #[serde(default)]
    pub vuln_type: Option<VulnType>,
    #[serde(default)]
    pub commit_msg_level: Option<CommitMsgLevel>,
    #[serde(default)]
    pub submit_time: Option<DateTime<Utc>>,
}

impl RunRecord {
    /// Minimal record; attribute fields default to unknown.
    pub fn new(case_id: impl Into<String>, success: bool, elapsed_min: f64, cost: f64) -> Self {
        Self {
            case_id: case_id.into(),
            model_label: String::new(),
            profile: ProfileId::Baseline,
            run_index: 0,
            success,
            elapsed_min,
            cost,
            tool_counts: BTreeMap::new(),
            poc_iterations: 0,
            breakpoints_set: 0,
            breakpoints_hit: 0,
            subsystem: None,
            is_race: None,
            vuln_type: None,
            commit_msg_level: None,
            submit_time: None,
        }
    }

    pub fn validate(&self) -> Result<(), StatsError> {
        if !(self.elapsed_min > 0.0) || !self.cost.is_finite() || self.cost < 0.0 {
            return Err(StatsError::InvalidRecord(self.case_id.clone()));
        }
        Ok(())
    }
}

/// How records are grouped into summary rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Factor {
    /// One row for everything.
    All,
    /// `all`, `success`, `fail` rows.
    Outcome,
    Subsystem,
    Race,
    VulnType,
    CommitMsgLevel,
    /// `pre-cutoff` / `post-cutoff` by submit time; the cutoff instant itself
    /// counts as pre-cutoff.
    Cutoff(DateTime<Utc>),
    Model,
}

impl Factor {
    fn group_of(&self, r: &RunRecord) -> String {
        match self {
            Factor::All | Factor::Outcome => "all".into(),
            Factor::Subsystem => r.subsystem.clone().unwrap_or_else(|| "unknown".into()),
            Factor::Race => match r.is_race {
                Some(true) => "race".into(),
                Some(false) => "non-race".into(),
                None => "unknown".into(),
            },
            Factor::VulnType => r.vuln_type.map(|v| v.to_string()).unwrap_or_else(|| "unknown".into()),
            Factor::CommitMsgLevel => r
                .commit_msg_level
                .map(|l| format!("type{}", l.as_u8()))
                .unwrap_or_else(|| "unknown".into()),
            Factor::Cutoff(cut) => match r.submit_time {
                Some(t) if t <= *cut => "pre-cutoff".into(),
                Some(_) => "post-cutoff".into(),
                None => "unknown".into(),
            },
            Factor::Model => r.model_label.clone(),
        }
    }
}

/// Discordant-pair comparison of two run sets over the same cases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub n: usize,
    pub first_successes: usize,
    pub second_successes: usize,
    /// cases succeeding only in the first set
    pub only_first: usize,
    /// cases succeeding only in the second set
    pub only_second: usize,
    /// (second rate - first rate) in percentage points
    pub delta_pp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub group: String,
    pub count: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_cost: f64,
    pub max_cost: f64,
    pub mean_time_min: f64,
    pub max_time_min: f64,
    pub p50_time_min: f64,
    pub p90_time_min: f64,
    pub tool_means: BTreeMap<ToolCategory, f64>,
    pub mean_poc_iterations: f64,
    pub paired: Option<PairedDelta>,
}

/// Nearest-rank percentile of an unsorted sample, `pct` in (0, 100].
pub fn nearest_rank(values: &[f64], pct: f64) -> Option<f64> {
    if values.is_empty() || !(pct > 0.0 && pct <= 100.0) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

fn index_by_case(records: &[RunRecord]) -> Result<BTreeMap<&str, &RunRecord>, StatsError> {
    let mut map = BTreeMap::new();
    for r in records {
        if map.insert(r.case_id.as_str(), r).is_some() {
            return Err(StatsError::DuplicateCase(r.case_id.clone()));
        }
    }
    Ok(map)
}

/// Compare two run sets case by case. Both sets must cover the same case ids.
pub fn discordant_pairs(first: &[RunRecord], second: &[RunRecord]) -> Result<PairedDelta, StatsError> {
    let a = index_by_case(first)?;
    let b = index_by_case(second)?;
    let ka: BTreeSet<_> = a.keys().collect();
    let kb: BTreeSet<_> = b.keys().collect();
    if ka != kb {
        return Err(StatsError::UnpairedCases);
    }
    if a.is_empty() {
        return Err(StatsError::EmptyGroup);
    }
    let mut d = PairedDelta {
        n: a.len(),
        first_successes: 0,
        second_successes: 0,
        only_first: 0,
        only_second: 0,
        delta_pp: 0.0,
    };
    for (case, ra) in &a {
        let rb = b[case];
        d.first_successes += ra.success as usize;
        d.second_successes += rb.success as usize;
        match (ra.success, rb.success) {
            (true, false) => d.only_first += 1,
            (false, true) => d.only_second += 1,
            _ => {}
        }
    }
    d.delta_pp = (d.second_successes as f64 - d.first_successes as f64) / d.n as f64 * 100.0;
    Ok(d)
}

fn summarize_group(group: String, members: &[&RunRecord]) -> SummaryRow {
    let n = members.len();
    let successes = members.iter().filter(|r| r.success).count();
    let costs: Vec<f64> = members.iter().map(|r| r.cost).collect();
    let times: Vec<f64> = members.iter().map(|r| r.elapsed_min).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut tool_means = BTreeMap::new();
    for cat in ToolCategory::ALL {
        let total: u64 = members.iter().map(|r| r.tool_counts.get(&cat).copied().unwrap_or(0)).sum();
        tool_means.insert(cat, total as f64 / n as f64);
    }

    SummaryRow {
        group,
        count: n,
        successes,
        success_rate: successes as f64 / n as f64,
        mean_cost: mean(&costs),
        max_cost: max(&costs),
        mean_time_min: mean(&times),
        max_time_min: max(&times),
        p50_time_min: nearest_rank(&times, 50.0).unwrap_or(f64::NAN),
        p90_time_min: nearest_rank(&times, 90.0).unwrap_or(f64::NAN),
        tool_means,
        mean_poc_iterations: members.iter().map(|r| r.poc_iterations as f64).sum::<f64>() / n as f64,
        paired: None,
    }
}

/// Group `records` by `grouping` and summarize each group. With `paired`,
/// every row also carries the discordant-pair delta against the paired set,
/// matched by case id (group membership follows the first set).
pub fn summarize_runs(
    records: &[RunRecord],
    grouping: &Factor,
    paired: Option<&[RunRecord]>,
) -> Result<Vec<SummaryRow>, StatsError> {
    if records.is_empty() {
        return Err(StatsError::EmptyGroup);
    }
    for r in records {
        r.validate()?;
    }
    let paired_index = match paired {
        Some(p) => {
            let a = index_by_case(records)?;
            let b = index_by_case(p)?;
            if a.keys().collect::<BTreeSet<_>>() != b.keys().collect::<BTreeSet<_>>() {
                return Err(StatsError::UnpairedCases);
            }
            Some(b)
        }
        None => None,
    };

    let mut groups: Vec<(String, Vec<&RunRecord>)> = Vec::new();
    if *grouping == Factor::Outcome {
        groups.push(("all".into(), records.iter().collect()));
        groups.push(("success".into(), records.iter().filter(|r| r.success).collect()));
        groups.push(("fail".into(), records.iter().filter(|r| !r.success).collect()));
        groups.retain(|(_, m)| !m.is_empty());
    } else {
        let mut by: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
        for r in records {
            by.entry(grouping.group_of(r)).or_default().push(r);
        }
        groups.extend(by);
    }

    let mut rows = Vec::with_capacity(groups.len());
    for (label, members) in groups {
        let mut row = summarize_group(label, &members);
        if let Some(idx) = &paired_index {
            let first: Vec<RunRecord> = members.iter().map(|r| (*r).clone()).collect();
            let second: Vec<RunRecord> = members.iter().map(|r| idx[r.case_id.as_str()].clone()).collect();
            row.paired = Some(discordant_pairs(&first, &second)?);
        }
        rows.push(row);
    }
    Ok(rows)
}
