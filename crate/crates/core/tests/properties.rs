//! Property tests for the pure parts of the harness.

use std::collections::BTreeSet;
use std::fs;

use patchrepro_core::codebrowse::{read_range, CodeIndex, QueryMode, DEFAULT_MAX_LINES};
use patchrepro_core::kdbg::{classify_expression, parse_mi_record, serialize_mi_record, MiClass, MiLine, MiRecord, MiValue};
use patchrepro_core::verdict::{classify_banner, parse_crash_reports, CrashClass};
use proptest::prelude::*;

// ---- code browsing ----

const WORDS: &[&str] = &["foo", "foo_bar", "xfoo", "foo1", "bar", "int", "struct", "ret", "_foo"];
const PUNCT: &[&str] = &[" ", "(", ")", ";", " = ", "->", ",", "*", "\t", "."];

fn source_line() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => proptest::collection::vec((proptest::sample::select(WORDS), proptest::sample::select(PUNCT)), 0..8)
            .prop_map(|toks| toks.into_iter().map(|(w, p)| format!("{w}{p}")).collect::<String>()),
        1 => proptest::sample::select(vec![
            "int foo(void)".to_string(),
            "{".to_string(),
            "}".to_string(),
            "#define foo_bar 1".to_string(),
            "struct foo {".to_string(),
            "};".to_string(),
        ]),
    ]
}

fn source_file() -> impl Strategy<Value = (Vec<String>, bool)> {
    (proptest::collection::vec(source_line(), 0..60), any::<bool>())
}

fn render((lines, final_newline): &(Vec<String>, bool)) -> String {
    let mut s = lines.join("\n");
    if *final_newline && !lines.is_empty() {
        s.push('\n');
    }
    s
}

/// Independent reference scan: identifier boundaries are ASCII word bytes.
fn brute_references(files: &[(String, String)], word: &str, defs: &BTreeSet<(String, usize)>) -> BTreeSet<(String, usize)> {
    let mut out = BTreeSet::new();
    for (name, text) in files {
        for (i, line) in text.split('\n').enumerate() {
            let hit = (0..line.len()).any(|s| {
                line[s..].starts_with(word)
                    && (s == 0 || !(line.as_bytes()[s - 1].is_ascii_alphanumeric() || line.as_bytes()[s - 1] == b'_'))
                    && line
                        .as_bytes()
                        .get(s + word.len())
                        .is_none_or(|b| !(b.is_ascii_alphanumeric() || *b == b'_'))
            });
            if hit && !defs.contains(&(name.clone(), i + 1)) {
                out.insert((name.clone(), i + 1));
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn references_equal_a_whole_word_scan(trees in proptest::collection::vec(source_file(), 1..4), wi in 0..WORDS.len()) {
        let dir = tempfile::tempdir().unwrap();
        let mut files = Vec::new();
        for (i, f) in trees.iter().enumerate() {
            let name = format!("d{}/f{i}.c", i % 2);
            fs::create_dir_all(dir.path().join(format!("d{}", i % 2))).unwrap();
            let text = render(f);
            fs::write(dir.path().join(&name), &text).unwrap();
            files.push((name, text));
        }
        let idx = CodeIndex::build(dir.path()).unwrap();
        let word = WORDS[wi];
        let defs: BTreeSet<(String, usize)> = idx
            .query_symbol(word, QueryMode::Definitions, usize::MAX).unwrap()
            .locations.into_iter().map(|l| (l.file, l.line)).collect();
        for (file, line) in &defs {
            let text = &files.iter().find(|f| &f.0 == file).unwrap().1;
            let l = text.split('\n').nth(line - 1).unwrap();
            prop_assert!(l.contains(word), "definition line {file}:{line} lacks {word}");
        }
        let got: BTreeSet<(String, usize)> = idx
            .query_symbol(word, QueryMode::References, usize::MAX).unwrap()
            .locations.into_iter().map(|l| (l.file, l.line)).collect();
        prop_assert_eq!(got, brute_references(&files, word, &defs));
    }

    #[test]
    fn snippets_over_a_partition_rebuild_the_file(file in source_file(), cuts in proptest::collection::vec(1usize..25, 1..10)) {
        let dir = tempfile::tempdir().unwrap();
        let text = render(&file);
        fs::write(dir.path().join("a.c"), &text).unwrap();
        let total = if text.is_empty() { 0 } else { text.split('\n').count() - usize::from(text.ends_with('\n')) };
        let mut rebuilt = String::new();
        let mut start = 1;
        let mut k = 0;
        while start <= total {
            let width = cuts[k % cuts.len()];
            k += 1;
            let s = read_range(dir.path(), "a.c", start, start + width - 1, DEFAULT_MAX_LINES).unwrap();
            prop_assert!(s.lines.len() <= width);
            for (j, l) in s.lines.iter().enumerate() {
                prop_assert_eq!(l.number, start + j);
                rebuilt.push_str(&l.text);
                if !(s.missing_final_newline && l.number == total) {
                    rebuilt.push('\n');
                }
            }
            start = s.end + 1;
        }
        prop_assert_eq!(rebuilt, text);
    }

    #[test]
    fn no_read_exceeds_the_line_cap(n in 1usize..1200, start in 1usize..1200, span in 0usize..2000, max in 1usize..600) {
        let dir = tempfile::tempdir().unwrap();
        let text: String = (0..n).map(|i| format!("line {i}\n")).collect();
        fs::write(dir.path().join("big.c"), text).unwrap();
        match read_range(dir.path(), "big.c", start, start + span, max.min(DEFAULT_MAX_LINES)) {
            Ok(s) => {
                prop_assert!(s.end - s.start + 1 <= max.min(DEFAULT_MAX_LINES));
                prop_assert_eq!(s.lines.len(), s.end - s.start + 1);
                prop_assert!(s.end <= n);
            }
            Err(_) => prop_assert!(start > n),
        }
    }
}

// ---- debugger MI ----

fn mi_string() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        prop_oneof![
            8 => proptest::char::range(' ', '~'),
            1 => Just('\n'),
            1 => Just('\t'),
            1 => Just('"'),
            1 => Just('\\'),
        ],
        0..16,
    )
    .prop_map(|cs| cs.into_iter().collect())
}

fn mi_key() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_-]{0,8}"
}

fn mi_value() -> impl Strategy<Value = MiValue> {
    mi_string().prop_map(MiValue::Const).prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            proptest::collection::vec((mi_key(), inner.clone()), 0..4).prop_map(MiValue::Tuple),
            proptest::collection::vec(inner.clone(), 0..4).prop_map(MiValue::List),
            proptest::collection::vec((mi_key(), inner), 1..4).prop_map(MiValue::ResultList),
        ]
    })
}

fn mi_record() -> impl Strategy<Value = MiRecord> {
    let classes = vec![
        MiClass::Result,
        MiClass::ExecAsync,
        MiClass::StatusAsync,
        MiClass::NotifyAsync,
        MiClass::ConsoleStream,
        MiClass::TargetStream,
        MiClass::LogStream,
    ];
    (
        proptest::sample::select(classes),
        proptest::option::of(0u64..100_000),
        "[a-z][a-z-]{0,10}",
        proptest::collection::vec((mi_key(), mi_value()), 0..4),
        mi_string(),
    )
        .prop_map(|(class, token, kind, payload, text)| {
            if class.is_stream() {
                MiRecord { token: None, class, kind: String::new(), payload: Vec::new(), text: Some(text) }
            } else {
                MiRecord { token, class, kind, payload, text: None }
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 512, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn mi_records_round_trip(rec in mi_record()) {
        let wire = serialize_mi_record(&rec);
        prop_assert!(!wire.contains('\n'));
        match parse_mi_record(&wire) {
            Ok(MiLine::Record(back)) => prop_assert_eq!(back, rec),
            other => prop_assert!(false, "{wire}: {other:?}"),
        }
    }

    #[test]
    fn mi_parser_never_panics(line in "\\PC{0,60}") {
        let _ = parse_mi_record(&line);
    }

    #[test]
    fn comparisons_are_never_writes(a in "[a-z_][a-z_0-9]{0,6}(->[a-z_]{1,5})?", b in "[0-9a-fx]{1,6}", op in proptest::sample::select(vec!["==", "!=", "<=", ">="])) {
        prop_assert_eq!(classify_expression(&format!("{a} {op} {b}")), None);
        let write = format!("{a} = {b}");
        prop_assert!(classify_expression(&write).is_some());
    }
}

// ---- crash parsing ----

const BANNERS: &[(&str, CrashClass)] = &[
    ("BUG: KASAN: slab-use-after-free in foo_release+0x1c/0x90", CrashClass::UAF),
    ("BUG: KASAN: use-after-free in foo_release+0x1c/0x90", CrashClass::UAF),
    ("BUG: KASAN: slab-out-of-bounds in foo_copy+0x10/0x40", CrashClass::OOB),
    ("BUG: KASAN: global-out-of-bounds in foo_copy+0x10/0x40", CrashClass::OOB),
    ("BUG: KASAN: double-free in kfree+0x80/0x200", CrashClass::DF),
    ("BUG: KASAN: invalid-free in kfree+0x80/0x200", CrashClass::DF),
    ("general protection fault, probably for non-canonical address 0xdffffc0000000003: 0000 [#1] PREEMPT SMP KASAN", CrashClass::GPF),
    ("BUG: kernel NULL pointer dereference, address: 0000000000000008", CrashClass::NullDeref),
    ("Kernel panic - not syncing: Fatal exception", CrashClass::PANIC),
    ("kernel BUG at net/core/skbuff.c:118!", CrashClass::BugOn),
    ("Oops: 0000 [#1] PREEMPT SMP", CrashClass::OTHER),
];

const NOISE: &[&str] = &[
    "[   12.000001] WARNING: CPU: 0 PID: 1 at net/core/dev.c:10 foo+0x1/0x2",
    "[   12.000002] rcu: INFO: rcu_preempt detected stalls on CPUs/tasks:",
    "[   12.000003] INFO: task kworker/0:1:12 blocked for more than 143 seconds.",
    "/ # ls /tmp",
    "poc: done",
    "[   12.000004] audit: type=1400 audit(1.2:3): apparmor=\"STATUS\"",
    "",
];

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn every_banner_has_exactly_one_class(i in 0..BANNERS.len(), prefix in proptest::sample::select(vec!["", "[   33.123456] ", "<4>[  1.5][  T42] ", "[    3.000000][    C1] "])) {
        let (text, class) = BANNERS[i];
        let line = format!("{prefix}{text}");
        prop_assert_eq!(classify_banner(patchrepro_core::verdict::strip_log_prefix(&line)).map(|b| b.class), Some(class));
    }

    #[test]
    fn noise_alone_is_never_a_crash(lines in proptest::collection::vec(proptest::sample::select(NOISE), 0..40)) {
        prop_assert!(parse_crash_reports(&lines.join("\n")).is_empty());
    }

    #[test]
    fn appending_non_banner_lines_keeps_parse_output(
        before in proptest::collection::vec(proptest::sample::select(NOISE), 0..10),
        i in 0..BANNERS.len(),
        tail in proptest::collection::vec(proptest::sample::select(NOISE), 1..20),
        extra in proptest::collection::vec(proptest::sample::select(NOISE), 1..20),
    ) {
        let mut lines: Vec<String> = before.iter().map(|s| s.to_string()).collect();
        lines.push(format!("[   40.000000] {}", BANNERS[i].0));
        lines.extend(tail.iter().map(|s| s.to_string()));
        // a report terminator fixes the block's extent
        lines.push("[   40.100000] ---[ end trace 0000000000000000 ]---".into());
        let base = lines.join("\n");
        let first = parse_crash_reports(&base);
        prop_assert_eq!(first.len(), 1);
        let longer = format!("{base}\n{}", extra.join("\n"));
        prop_assert_eq!(parse_crash_reports(&longer), first);
    }
}
