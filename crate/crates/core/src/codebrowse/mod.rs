//! Bounded, on-demand inspection of a C source tree.
//!
//! [`CodeIndex::build`] runs the lexical definition scanner over every `.c`
//! and `.h` file; references are found at query time by a whole-word line
//! scan. Output of every operation is capped so that a single call never
//! floods the caller with source text.

mod lexer;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

pub const DEFAULT_MAX_LINES: usize = 400;
pub const DEFAULT_QUERY_LIMIT: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymbolKind {
    Function,
    Struct,
    Union,
    Enum,
    Macro,
    Typedef,
    Global,
}

impl SymbolKind {
    pub const ALL: [SymbolKind; 7] = [
        SymbolKind::Function,
        SymbolKind::Struct,
        SymbolKind::Union,
        SymbolKind::Enum,
        SymbolKind::Macro,
        SymbolKind::Typedef,
        SymbolKind::Global,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SymbolKind::Function => "function",
            SymbolKind::Struct => "struct",
            SymbolKind::Union => "union",
            SymbolKind::Enum => "enum",
            SymbolKind::Macro => "macro",
            SymbolKind::Typedef => "typedef",
            SymbolKind::Global => "global",
        }
    }
}

impl fmt::Display for SymbolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SymbolKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SymbolKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown symbol kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SymbolEntry {
    pub name: String,
    pub kind: SymbolKind,
    /// path relative to the index root, `/`-separated
    pub file: String,
    pub line: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    Definitions,
    References,
}

impl FromStr for QueryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "definitions" => Ok(QueryMode::Definitions),
            "references" => Ok(QueryMode::References),
            other => Err(format!("unknown query mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Location {
    pub file: String,
    pub line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<SymbolKind>,
    /// the matching source line, for reference hits
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryResult {
    pub locations: Vec<Location>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumberedLine {
    pub number: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub file: String,
    pub start: usize,
    pub end: usize,
    pub lines: Vec<NumberedLine>,
    /// set when `max_lines` cut the requested range short
    pub truncated: bool,
    /// the snippet contains the file's last line and the file has no final newline
    pub missing_final_newline: bool,
}

impl Snippet {
    /// Exact bytes of the covered lines, without number prefixes.
    pub fn raw_text(&self) -> String {
        let mut out = String::new();
        for (i, l) in self.lines.iter().enumerate() {
            out.push_str(&l.text);
            if i + 1 < self.lines.len() || !self.missing_final_newline {
                out.push('\n');
            }
        }
        out
    }

    /// Lines prefixed with their true line numbers.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            out.push_str(&format!("{:>6}\t{}\n", l.number, l.text));
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CodeBrowseError {
    #[error("source root {path} unreadable: {source}")]
    RootUnreadable { path: PathBuf, source: std::io::Error },
    #[error("file not indexed: {0}")]
    FileNotIndexed(String),
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("start line {start} is beyond end of file ({len} lines)")]
    StartBeyondEof { start: usize, len: usize },
    #[error("invalid line range {start}..{end}")]
    InvalidRange { start: usize, end: usize },
    #[error("limit must be at least 1")]
    InvalidLimit,
    #[error("index file line {line}: {reason}")]
    IndexFormat { line: usize, reason: String },
    #[error("code browse I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Symbol index over a source tree. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeIndex {
    root: PathBuf,
    entries: BTreeMap<String, Vec<SymbolEntry>>,
    files: BTreeSet<String>,
    build_time_ms: u64,
}

fn is_source(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("c") | Some("h"))
}

/// Normalise a caller-supplied path to the index form; `None` for paths
/// that escape the root.
fn normalize_rel(root: &Path, file: &str) -> Option<String> {
    let p = Path::new(file);
    let p = if p.is_absolute() { p.strip_prefix(root).ok()? } else { p };
    let mut parts = Vec::new();
    for c in p.components() {
        match c {
            Component::Normal(s) => parts.push(s.to_str()?.to_string()),
            Component::CurDir => {}
            _ => return None,
        }
    }
    if parts.is_empty() {
        return None;
    }
    Some(parts.join("/"))
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Whether `line` contains `word` delimited by non-identifier characters.
pub fn contains_whole_word(line: &str, word: &str) -> bool {
    if word.is_empty() {
        return false;
    }
    let bytes = line.as_bytes();
    line.match_indices(word).any(|(i, _)| {
        let before = i == 0 || !is_word_byte(bytes[i - 1]);
        let j = i + word.len();
        let after = j >= bytes.len() || !is_word_byte(bytes[j]);
        before && after
    })
}

/// Lines of `text` without terminators, plus whether the last line lacked one.
fn split_lines(text: &str) -> (Vec<&str>, bool) {
    if text.is_empty() {
        return (Vec::new(), false);
    }
    let mut lines: Vec<&str> = text.split('\n').collect();
    let missing_final_newline = !text.ends_with('\n');
    if !missing_final_newline {
        lines.pop();
    }
    (lines, missing_final_newline)
}

impl CodeIndex {
    pub fn build(source_root: &Path) -> Result<Self, CodeBrowseError> {
        let started = Instant::now();
        let root = source_root.to_path_buf();
        fs::read_dir(&root).map_err(|source| CodeBrowseError::RootUnreadable { path: root.clone(), source })?;
        let mut entries: BTreeMap<String, Vec<SymbolEntry>> = BTreeMap::new();
        let mut files = BTreeSet::new();
        for ent in WalkDir::new(&root).sort_by_file_name() {
            let ent = ent.map_err(|e| CodeBrowseError::Io(e.into()))?;
            if !ent.file_type().is_file() || !is_source(ent.path()) {
                continue;
            }
            let Some(rel) = ent.path().strip_prefix(&root).ok().and_then(|p| normalize_rel(Path::new(""), p.to_str()?))
            else {
                continue;
            };
            let text = String::from_utf8_lossy(&fs::read(ent.path())?).into_owned();
            for (name, kind, line) in lexer::scan_definitions(&text) {
                entries.entry(name.clone()).or_default().push(SymbolEntry { name, kind, file: rel.clone(), line });
            }
            files.insert(rel);
        }
        for list in entries.values_mut() {
            list.sort();
            list.dedup();
        }
        Ok(CodeIndex { root, entries, files, build_time_ms: started.elapsed().as_millis() as u64 })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn file_count(&self) -> usize {
        self.files.len()
    }

    pub fn files(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(String::as_str)
    }

    pub fn build_time_ms(&self) -> u64 {
        self.build_time_ms
    }

    pub fn entry_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    /// Every entry, ordered by (name, kind, file, line).
    pub fn entries(&self) -> impl Iterator<Item = &SymbolEntry> {
        self.entries.values().flatten()
    }

    pub fn list_symbols(&self, file: &str) -> Result<Vec<SymbolEntry>, CodeBrowseError> {
        let rel = normalize_rel(&self.root, file)
            .filter(|r| self.files.contains(r))
            .ok_or_else(|| CodeBrowseError::FileNotIndexed(file.to_string()))?;
        let mut out: Vec<SymbolEntry> = self.entries().filter(|e| e.file == rel).cloned().collect();
        out.sort_by(|a, b| a.line.cmp(&b.line).then_with(|| a.name.cmp(&b.name)));
        Ok(out)
    }

    pub fn query_symbol(&self, name: &str, mode: QueryMode, limit: usize) -> Result<QueryResult, CodeBrowseError> {
        if limit == 0 {
            return Err(CodeBrowseError::InvalidLimit);
        }
        let defs = self.entries.get(name).map(Vec::as_slice).unwrap_or(&[]);
        let mut locations = Vec::new();
        let mut truncated = false;
        match mode {
            QueryMode::Definitions => {
                for e in defs {
                    if locations.len() == limit {
                        truncated = true;
                        break;
                    }
                    locations.push(Location { file: e.file.clone(), line: e.line, kind: Some(e.kind), text: None });
                }
            }
            QueryMode::References => {
                let def_lines: BTreeSet<(&str, usize)> = defs.iter().map(|e| (e.file.as_str(), e.line)).collect();
                'files: for file in &self.files {
                    let bytes = fs::read(self.root.join(file))?;
                    let text = String::from_utf8_lossy(&bytes);
                    for (i, line) in split_lines(&text).0.into_iter().enumerate() {
                        let number = i + 1;
                        if !contains_whole_word(line, name) || def_lines.contains(&(file.as_str(), number)) {
                            continue;
                        }
                        if locations.len() == limit {
                            truncated = true;
                            break 'files;
                        }
                        locations.push(Location {
                            file: file.clone(),
                            line: number,
                            kind: None,
                            text: Some(line.trim_end_matches('\r').to_string()),
                        });
                    }
                }
            }
        }
        Ok(QueryResult { locations, truncated })
    }

    /// Flat-file form: `#file\t<path>` for every indexed file, then sorted
    /// `name\tkind\tfile\tline` records.
    pub fn to_flat(&self) -> String {
        let mut out = String::new();
        for f in &self.files {
            out.push_str(&format!("#file\t{f}\n"));
        }
        for e in self.entries() {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", e.name, e.kind, e.file, e.line));
        }
        out
    }

    pub fn from_flat(root: &Path, text: &str) -> Result<Self, CodeBrowseError> {
        let mut entries: BTreeMap<String, Vec<SymbolEntry>> = BTreeMap::new();
        let mut files = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let bad = |reason: &str| CodeBrowseError::IndexFormat { line: i + 1, reason: reason.to_string() };
            if line.is_empty() {
                continue;
            }
            if let Some(f) = line.strip_prefix("#file\t") {
                files.insert(f.to_string());
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [name, kind, file, number] = fields[..] else {
                return Err(bad("expected 4 tab-separated fields"));
            };
            let kind = kind.parse().map_err(|e: String| bad(&e))?;
            let line_no = number.parse().map_err(|_| bad("line is not a number"))?;
            if !files.contains(file) {
                return Err(bad("entry for a file without #file header"));
            }
            entries.entry(name.to_string()).or_default().push(SymbolEntry {
                name: name.to_string(),
                kind,
                file: file.to_string(),
                line: line_no,
            });
        }
        for list in entries.values_mut() {
            list.sort();
        }
        Ok(CodeIndex { root: root.to_path_buf(), entries, files, build_time_ms: 0 })
    }

    pub fn save(&self, path: &Path) -> Result<(), CodeBrowseError> {
        crate::util::write_atomic(path, self.to_flat())?;
        Ok(())
    }

    pub fn load(root: &Path, path: &Path) -> Result<Self, CodeBrowseError> {
        Self::from_flat(root, &fs::read_to_string(path)?)
    }
}

/// Lines `[start, min(end, EOF, start + max_lines - 1)]` of `file`.
pub fn read_range(
    source_root: &Path,
    file: &str,
    start: usize,
    end: usize,
    max_lines: usize,
) -> Result<Snippet, CodeBrowseError> {
    if start == 0 || end < start || max_lines == 0 {
        return Err(CodeBrowseError::InvalidRange { start, end });
    }
    let rel = normalize_rel(source_root, file).ok_or_else(|| CodeBrowseError::FileNotFound(file.to_string()))?;
    let path = source_root.join(&rel);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(_) if !path.is_file() => return Err(CodeBrowseError::FileNotFound(file.to_string())),
        Err(e) => return Err(e.into()),
    };
    let text = String::from_utf8_lossy(&bytes);
    let (lines, missing_final_newline) = split_lines(&text);
    if start > lines.len() {
        return Err(CodeBrowseError::StartBeyondEof { start, len: lines.len() });
    }
    let cap_end = start.saturating_add(max_lines - 1);
    let eof_end = end.min(lines.len());
    let last = eof_end.min(cap_end);
    Ok(Snippet {
        file: rel,
        start,
        end: last,
        lines: (start..=last).map(|n| NumberedLine { number: n, text: lines[n - 1].to_string() }).collect(),
        truncated: cap_end < eof_end,
        missing_final_newline: missing_final_newline && last == lines.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(files: &[(&str, &str)]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (path, body) in files {
            let p = dir.path().join(path);
            fs::create_dir_all(p.parent().unwrap()).unwrap();
            fs::write(p, body).unwrap();
        }
        dir
    }

    #[test]
    fn whole_word_boundaries() {
        assert!(contains_whole_word("x = foo(1);", "foo"));
        assert!(!contains_whole_word("x = foo_bar(1);", "foo"));
        assert!(!contains_whole_word("x = barfoo;", "foo"));
        assert!(contains_whole_word("foo", "foo"));
        assert!(contains_whole_word("barfoo foo", "foo"));
    }

    #[test]
    fn list_symbols_rejects_escapes() {
        let dir = tree(&[("a.c", "int f(void) { return 0; }\n")]);
        let idx = CodeIndex::build(dir.path()).unwrap();
        assert_eq!(idx.list_symbols("./a.c").unwrap().len(), 1);
        assert!(matches!(idx.list_symbols("../a.c"), Err(CodeBrowseError::FileNotIndexed(_))));
        assert!(matches!(idx.list_symbols("/etc/passwd"), Err(CodeBrowseError::FileNotIndexed(_))));
    }

    #[test]
    fn flat_file_round_trips() {
        let dir = tree(&[("a.c", "struct s { int x; };\nint f(void) { return 0; }\n"), ("inc/empty.h", "\n")]);
        let idx = CodeIndex::build(dir.path()).unwrap();
        let back = CodeIndex::from_flat(dir.path(), &idx.to_flat()).unwrap();
        assert_eq!(back.entries().collect::<Vec<_>>(), idx.entries().collect::<Vec<_>>());
        assert_eq!(back.file_count(), 2);
        assert!(back.list_symbols("inc/empty.h").unwrap().is_empty());
        assert!(matches!(CodeIndex::from_flat(dir.path(), "a\tb\n"), Err(CodeBrowseError::IndexFormat { line: 1, .. })));
    }

    #[test]
    fn read_range_without_final_newline() {
        let dir = tree(&[("a.c", "one\ntwo\nthree")]);
        let s = read_range(dir.path(), "a.c", 2, 10, 400).unwrap();
        assert_eq!(s.end, 3);
        assert!(s.missing_final_newline);
        assert_eq!(s.raw_text(), "two\nthree");
        assert_eq!(s.render(), "     2\ttwo\n     3\tthree\n");
        assert!(matches!(read_range(dir.path(), "a.c", 4, 5, 400), Err(CodeBrowseError::StartBeyondEof { .. })));
        assert!(matches!(read_range(dir.path(), "b.c", 1, 5, 400), Err(CodeBrowseError::FileNotFound(_))));
        assert!(matches!(read_range(dir.path(), "a.c", 0, 5, 400), Err(CodeBrowseError::InvalidRange { .. })));
    }
}
