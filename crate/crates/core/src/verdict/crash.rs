//! Kernel crash report extraction from console transcripts.
//!
//! A report starts at a banner line and runs until an end-of-report
//! delimiter or [`MAX_BLOCK_LINES`]. Banners that appear inside an open
//! report (the `Oops:` line following a NULL-dereference banner, say)
//! belong to that report rather than starting a new one.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub const MAX_BLOCK_LINES: usize = 200;

#[allow(clippy::upper_case_acronyms)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CrashClass {
    UAF,
    OOB,
    DF,
    GPF,
    #[serde(rename = "NULL_DEREF")]
    NullDeref,
    PANIC,
    #[serde(rename = "BUG_ON")]
    BugOn,
    OTHER,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sanitizer {
    Kasan,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashReport {
    pub class: CrashClass,
    pub sanitizer: Sanitizer,
    pub crash_function: Option<String>,
    /// `file:line` when the report names one
    pub location: Option<String>,
    /// index of the banner line in the transcript
    pub first_line_index: usize,
    pub raw_block: String,
}

/// What a single banner line says about the crash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Banner {
    pub class: CrashClass,
    pub sanitizer: Sanitizer,
    pub function: Option<String>,
}

static LOG_PREFIX: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*(?:<\d+>)?(?:\[\s*\d+\.\d+\]\s*)?(?:\[\s*[CT]\d+\]\s*)?").unwrap()
});
static KASAN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^BUG: KASAN: ([A-Za-z0-9_-]+(?: or [A-Za-z0-9_-]+)?)(?: in ([A-Za-z0-9_.$]+))?").unwrap()
});
static GPF: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(?:Oops: )?general protection fault").unwrap());
static RIP_FUNC: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"RIP: [0-9a-fA-F]+:([A-Za-z0-9_.$]+)\+0x").unwrap());
static SOURCE_LOC: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"([A-Za-z0-9_./-]+\.[ch]:\d+)").unwrap());

/// Strip printk level, timestamp and caller-id prefixes.
pub fn strip_log_prefix(line: &str) -> &str {
    let m = LOG_PREFIX.find(line).map(|m| m.end()).unwrap_or(0);
    &line[m..]
}

fn strip_offset(func: &str) -> String {
    func.split('+').next().unwrap_or(func).to_string()
}

/// Classify a transcript line against the banner table. `None` for
/// anything that is not a kernel-level crash banner (warnings, RCU stalls,
/// hung-task and soft-lockup reports included).
pub fn classify_banner(line: &str) -> Option<Banner> {
    let body = strip_log_prefix(line);
    if let Some(c) = KASAN.captures(body) {
        let subtype = &c[1];
        let class = if subtype.contains("use-after-free") {
            CrashClass::UAF
        } else if subtype.ends_with("out-of-bounds") {
            CrashClass::OOB
        } else if subtype.contains("double-free") || subtype.contains("invalid-free") {
            CrashClass::DF
        } else {
            CrashClass::OTHER
        };
        return Some(Banner {
            class,
            sanitizer: Sanitizer::Kasan,
            function: c.get(2).map(|m| strip_offset(m.as_str())),
        });
    }
    let class = if GPF.is_match(body) {
        CrashClass::GPF
    } else if body.starts_with("BUG: kernel NULL pointer dereference") {
        CrashClass::NullDeref
    } else if body.starts_with("Kernel panic - not syncing") {
        CrashClass::PANIC
    } else if body.starts_with("kernel BUG at") {
        CrashClass::BugOn
    } else if body.starts_with("Oops:") {
        CrashClass::OTHER
    } else {
        return None;
    };
    Some(Banner { class, sanitizer: Sanitizer::None, function: None })
}

/// True for lines that close a report: `---[ end ...` trailers and the
/// `=====` rule KASAN prints after its report body.
pub fn is_report_end(line: &str, banner: &Banner) -> bool {
    let body = strip_log_prefix(line).trim();
    if body.starts_with("---[ end") {
        return true;
    }
    banner.sanitizer == Sanitizer::Kasan && body.len() >= 10 && body.bytes().all(|b| b == b'=')
}

/// Extract every crash report from a decoded console transcript.
pub fn parse_crash_reports(console_text: &str) -> Vec<CrashReport> {
    let lines: Vec<&str> = console_text.lines().collect();
    let mut reports = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let Some(banner) = classify_banner(lines[i]) else {
            i += 1;
            continue;
        };
        let start = i;
        let mut end = i;
        let mut j = i + 1;
        while j < lines.len() && j - start < MAX_BLOCK_LINES {
            end = j;
            if is_report_end(lines[j], &banner) {
                break;
            }
            j += 1;
        }
        let block = &lines[start..=end];
        let crash_function = banner.function.clone().or_else(|| {
            block.iter().find_map(|l| RIP_FUNC.captures(l).map(|c| c[1].to_string()))
        });
        let location = block.iter().find_map(|l| SOURCE_LOC.captures(strip_log_prefix(l)).map(|c| c[1].to_string()));
        reports.push(CrashReport {
            class: banner.class,
            sanitizer: banner.sanitizer,
            crash_function,
            location,
            first_line_index: start,
            raw_block: block.join("\n"),
        });
        i = end + 1;
    }
    reports
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kasan_subtypes_map_to_classes() {
        let cases = [
            ("BUG: KASAN: use-after-free in nft_chain_lookup+0x1a/0x30", CrashClass::UAF),
            ("BUG: KASAN: slab-use-after-free in foo", CrashClass::UAF),
            ("BUG: KASAN: slab-out-of-bounds in bar+0x2/0x9", CrashClass::OOB),
            ("BUG: KASAN: global-out-of-bounds in baz", CrashClass::OOB),
            ("BUG: KASAN: double-free or invalid-free in kfree+0x10/0x20", CrashClass::DF),
            ("BUG: KASAN: double-free in kfree", CrashClass::DF),
            ("BUG: KASAN: invalid-free in kfree", CrashClass::DF),
            ("BUG: KASAN: wild-memory-access in qux", CrashClass::OTHER),
        ];
        for (line, class) in cases {
            let b = classify_banner(&format!("[   12.345678] {line}")).unwrap();
            assert_eq!(b.class, class, "{line}");
            assert_eq!(b.sanitizer, Sanitizer::Kasan);
        }
        let b = classify_banner("BUG: KASAN: use-after-free in nft_chain_lookup+0x1a/0x30").unwrap();
        assert_eq!(b.function.as_deref(), Some("nft_chain_lookup"));
    }

    #[test]
    fn non_kasan_banners() {
        let cases = [
            ("general protection fault, probably for non-canonical address 0xdffffc0000000001: 0000 [#1]", CrashClass::GPF),
            ("Oops: general protection fault, probably for non-canonical address", CrashClass::GPF),
            ("BUG: kernel NULL pointer dereference, address: 0000000000000008", CrashClass::NullDeref),
            ("Kernel panic - not syncing: Fatal exception", CrashClass::PANIC),
            ("kernel BUG at net/core/skbuff.c:118!", CrashClass::BugOn),
            ("Oops: 0000 [#1] PREEMPT SMP KASAN", CrashClass::OTHER),
        ];
        for (line, class) in cases {
            assert_eq!(classify_banner(line).unwrap().class, class, "{line}");
        }
    }

    #[test]
    fn warnings_and_stalls_are_not_crashes() {
        for line in [
            "WARNING: CPU: 0 PID: 123 at net/netfilter/nf_tables_api.c:500 nft_foo+0x1/0x2",
            "INFO: rcu_sched self-detected stall on CPU",
            "INFO: task kworker/0:1:12 blocked for more than 143 seconds.",
            "watchdog: BUG: soft lockup - CPU#0 stuck for 22s! [poc:300]",
            "KASAN: null-ptr-deref in range [0x0000000000000008-0x000000000000000f]",
        ] {
            assert!(classify_banner(line).is_none(), "{line}");
        }
    }

    #[test]
    fn prefix_stripping_handles_caller_ids() {
        assert_eq!(strip_log_prefix("[  101.000001][ T4321] BUG: x"), "BUG: x");
        assert_eq!(strip_log_prefix("<4>[    1.5] Oops:"), "Oops:");
        assert_eq!(strip_log_prefix("plain"), "plain");
    }

    #[test]
    fn block_stops_at_kasan_rule_and_panic_starts_new_report() {
        let text = "\
==================================================================
BUG: KASAN: use-after-free in nft_chain_lookup+0x1a/0x30 net/netfilter/nf_tables_api.c:321
Read of size 8 at addr ffff888012345678 by task poc/123
==================================================================
Kernel panic - not syncing: KASAN: panic_on_warn set ...
---[ end Kernel panic - not syncing: KASAN: panic_on_warn set ... ]---
# ";
        let r = parse_crash_reports(text);
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].class, CrashClass::UAF);
        assert_eq!(r[0].first_line_index, 1);
        assert_eq!(r[0].location.as_deref(), Some("net/netfilter/nf_tables_api.c:321"));
        assert_eq!(r[0].raw_block.lines().count(), 3);
        assert_eq!(r[1].class, CrashClass::PANIC);
        assert_eq!(r[1].first_line_index, 4);
    }

    #[test]
    fn oops_inside_null_deref_report_is_not_a_new_report() {
        let text = "\
BUG: kernel NULL pointer dereference, address: 0000000000000008
#PF: supervisor read access in kernel mode
Oops: 0000 [#1] PREEMPT SMP KASAN
RIP: 0010:tcf_exts_exec+0x12/0x40
---[ end trace 0000000000000000 ]---";
        let r = parse_crash_reports(text);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].class, CrashClass::NullDeref);
        assert_eq!(r[0].crash_function.as_deref(), Some("tcf_exts_exec"));
    }

    #[test]
    fn block_is_capped() {
        let mut text = String::from("kernel BUG at mm/slub.c:1\n");
        for i in 0..500 {
            text.push_str(&format!("line {i}\n"));
        }
        let r = parse_crash_reports(&text);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].raw_block.lines().count(), MAX_BLOCK_LINES);
        assert_eq!(r[0].location.as_deref(), Some("mm/slub.c:1"));
    }
}
