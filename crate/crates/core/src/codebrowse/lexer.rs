//! Pattern-based extraction of C definitions.
//!
//! The source is first blanked: comments and the contents of string and
//! character literals become spaces, so braces and semicolons inside them
//! are invisible while line numbers stay put. Preprocessor directives are
//! recorded (for `#define`) and then blanked as well; every `#if` branch is
//! scanned. What remains is split into top-level statements, each ending at
//! a `;` or at the `{` that opens a body, and every statement is matched
//! against a handful of definition shapes.

use std::sync::LazyLock;

use regex::Regex;

use super::SymbolKind;

static DEFINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*#\s*define\s+([A-Za-z_]\w*)").unwrap());
static AGGREGATE_HEAD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(struct|union|enum)(?:\s+__\w+(?:\s*\(\([^)]*\)\))?)*(?:\s+([A-Za-z_]\w*))?\s*$").unwrap()
});
static FN_PTR_NAME: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(\s*\*\s*([A-Za-z_]\w*)\s*\)").unwrap());
static IDENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Za-z_]\w*").unwrap());

const KEYWORDS: &[&str] = &[
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else", "enum", "extern",
    "float", "for", "goto", "if", "inline", "int", "long", "register", "restrict", "return", "short", "signed",
    "sizeof", "static", "struct", "switch", "typedef", "union", "unsigned", "void", "volatile", "while", "bool",
    "_Bool", "asm", "__asm__", "typeof", "__typeof__", "_Static_assert", "static_assert",
];

fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

/// Attribute-like tokens that sit between a declarator and `=` or `(`.
fn is_attribute(s: &str) -> bool {
    s.starts_with("__")
}

/// Blank comments and literal contents, preserving newlines and length.
fn blank_comments_and_literals(src: &str) -> Vec<u8> {
    #[derive(PartialEq)]
    enum St {
        Code,
        Line,
        Block,
        Str,
        Chr,
    }
    let b = src.as_bytes();
    let mut out = b.to_vec();
    let mut st = St::Code;
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        let next = b.get(i + 1).copied();
        match st {
            St::Code => match (c, next) {
                (b'/', Some(b'/')) => {
                    st = St::Line;
                    out[i] = b' ';
                    out[i + 1] = b' ';
                    i += 1;
                }
                (b'/', Some(b'*')) => {
                    st = St::Block;
                    out[i] = b' ';
                    out[i + 1] = b' ';
                    i += 1;
                }
                (b'"', _) => st = St::Str,
                (b'\'', _) => st = St::Chr,
                _ => {}
            },
            St::Line => {
                if c == b'\n' {
                    st = St::Code;
                } else {
                    out[i] = b' ';
                }
            }
            St::Block => {
                if c == b'*' && next == Some(b'/') {
                    out[i] = b' ';
                    out[i + 1] = b' ';
                    i += 1;
                    st = St::Code;
                } else if c != b'\n' {
                    out[i] = b' ';
                }
            }
            St::Str | St::Chr => {
                let close = if st == St::Str { b'"' } else { b'\'' };
                if c == b'\\' && next.is_some() {
                    out[i] = b' ';
                    if next != Some(b'\n') {
                        out[i + 1] = b' ';
                    }
                    i += 1;
                } else if c == close {
                    st = St::Code;
                } else if c == b'\n' {
                    // unterminated literal; resynchronise at end of line
                    st = St::Code;
                } else {
                    out[i] = b' ';
                }
            }
        }
        i += 1;
    }
    out
}

/// Record `#define` names and blank all directive lines (with continuations).
fn strip_preprocessor(clean: &mut [u8], found: &mut Vec<(String, SymbolKind, usize)>) {
    let mut line_no = 1;
    let mut start = 0;
    let mut in_directive = false;
    while start < clean.len() {
        let end = clean[start..].iter().position(|&c| c == b'\n').map(|p| start + p).unwrap_or(clean.len());
        let line = &clean[start..end];
        let first = line.iter().find(|c| !c.is_ascii_whitespace()).copied();
        if in_directive || first == Some(b'#') {
            if !in_directive {
                if let Some(c) = DEFINE.captures(&String::from_utf8_lossy(line)) {
                    found.push((c[1].to_string(), SymbolKind::Macro, line_no));
                }
            }
            let continued = line.iter().rev().find(|c| !matches!(c, b' ' | b'\t' | b'\r')) == Some(&b'\\');
            for c in &mut clean[start..end] {
                *c = b' ';
            }
            in_directive = continued;
        }
        start = end + 1;
        line_no += 1;
    }
}

#[derive(Default)]
struct Stmt {
    text: String,
    lines: Vec<usize>,
}

impl Stmt {
    fn push(&mut self, c: char, line: usize) {
        self.text.push(c);
        for _ in 0..c.len_utf8() {
            self.lines.push(line);
        }
    }

    fn clear(&mut self) {
        self.text.clear();
        self.lines.clear();
    }

    fn line_at(&self, offset: usize) -> usize {
        self.lines.get(offset).copied().unwrap_or(1)
    }
}

#[derive(Clone, Copy)]
enum AfterBlock {
    /// body of `struct/union/enum`; declarators may follow the `}`
    Aggregate { typedef: bool },
    /// `= { ... }` initializer or an unrecognised block
    Skip,
}

/// Identifiers of a text slice with their byte offsets.
fn idents(s: &str) -> Vec<(usize, &str)> {
    IDENT.find_iter(s).map(|m| (m.start(), m.as_str())).collect()
}

/// Name of the declarator in `decl`: the last identifier that is not an
/// attribute, ignoring array bounds and anything after `=`.
fn declarator_name(decl: &str, base: usize) -> Option<(usize, String)> {
    let head = decl.split('=').next().unwrap_or(decl);
    let head = match head.find('[') {
        Some(p) => &head[..p],
        None => head,
    };
    idents(head)
        .into_iter()
        .rev()
        .find(|(_, id)| !is_keyword(id) && !is_attribute(id))
        .map(|(off, id)| (base + off, id.to_string()))
}

/// Split on commas that are not nested inside brackets or parentheses.
fn split_top_commas(s: &str) -> Vec<(usize, &str)> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                parts.push((start, &s[start..i]));
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push((start, &s[start..]));
    parts
}

fn leading_word(s: &str) -> Option<&str> {
    IDENT.find(s.trim_start()).filter(|m| m.start() == 0).map(|m| m.as_str())
}

/// Statement text that precedes a `{` at file scope.
fn on_open(stmt: &Stmt, out: &mut Vec<(String, SymbolKind, usize)>) -> AfterBlock {
    let s = stmt.text.trim_end();
    let typedef = leading_word(s) == Some("typedef");

    if s.ends_with('=') {
        let body = &s[..s.len() - 1];
        if let Some((off, name)) = declarator_name(body, 0) {
            out.push((name, SymbolKind::Global, stmt.line_at(off)));
        }
        return AfterBlock::Skip;
    }
    if let Some(c) = AGGREGATE_HEAD.captures(s) {
        if let Some(name) = c.get(2) {
            let kind = match &c[1] {
                "struct" => SymbolKind::Struct,
                "union" => SymbolKind::Union,
                _ => SymbolKind::Enum,
            };
            out.push((name.as_str().to_string(), kind, stmt.line_at(name.start())));
        }
        return AfterBlock::Aggregate { typedef };
    }
    if s.contains('(') && s.ends_with(')') || s.contains('(') && !typedef {
        // function definition: first `ident(` that is not an attribute
        let mut search = 0;
        while let Some(p) = s[search..].find('(') {
            let open = search + p;
            let before = s[..open].trim_end();
            if let Some((off, id)) = idents(before).last().copied() {
                if off + id.len() == before.len() && !is_keyword(id) && !id.starts_with("__attribute") {
                    if id == "__declspec" {
                        search = open + 1;
                        continue;
                    }
                    out.push((id.to_string(), SymbolKind::Function, stmt.line_at(off)));
                    return AfterBlock::Skip;
                }
            }
            search = open + 1;
        }
    }
    AfterBlock::Skip
}

/// Statement text that ends in `;` at file scope.
fn on_semicolon(stmt: &Stmt, after: Option<AfterBlock>, out: &mut Vec<(String, SymbolKind, usize)>) {
    let s = stmt.text.as_str();
    if s.trim().is_empty() {
        return;
    }
    match after {
        Some(AfterBlock::Aggregate { typedef }) => {
            let kind = if typedef { SymbolKind::Typedef } else { SymbolKind::Global };
            for (base, decl) in split_top_commas(s) {
                if let Some((off, name)) = declarator_name(decl, base) {
                    out.push((name, kind, stmt.line_at(off)));
                }
            }
            return;
        }
        Some(AfterBlock::Skip) => return,
        None => {}
    }

    let first = leading_word(s);
    if first == Some("typedef") {
        if let Some(c) = FN_PTR_NAME.captures(s) {
            let m = c.get(1).unwrap();
            out.push((m.as_str().to_string(), SymbolKind::Typedef, stmt.line_at(m.start())));
        } else if let Some((off, name)) = declarator_name(s, 0) {
            out.push((name, SymbolKind::Typedef, stmt.line_at(off)));
        }
        return;
    }
    if matches!(first, Some("extern") | Some("asm") | Some("__asm__") | Some("_Static_assert") | Some("static_assert")) {
        return;
    }
    let decls = split_top_commas(s);
    let (_, head) = decls[0];
    // `struct foo;` forward declaration
    let head_ids: Vec<_> = idents(head.split('=').next().unwrap_or(head));
    if matches!(first, Some("struct") | Some("union") | Some("enum")) && head_ids.len() <= 2 {
        return;
    }
    let paren = head.find('(');
    let eq = head.find('=');
    match (paren, eq) {
        (Some(p), Some(e)) if e < p => {}
        (Some(_), _) => return, // prototype or macro invocation
        _ => {}
    }
    let type_tokens = head_ids.iter().filter(|(_, id)| !is_attribute(id)).count();
    if type_tokens < 2 {
        return;
    }
    for (base, decl) in decls {
        if decl.contains('(') && !decl.split('=').next().unwrap_or("").trim().is_empty() && decl.find('(') < decl.find('=') {
            continue;
        }
        if let Some((off, name)) = declarator_name(decl, base) {
            out.push((name, SymbolKind::Global, stmt.line_at(off)));
        }
    }
}

/// All definitions in `src` as (name, kind, 1-based line), sorted by line.
pub(crate) fn scan_definitions(src: &str) -> Vec<(String, SymbolKind, usize)> {
    let mut out = Vec::new();
    let mut clean = blank_comments_and_literals(src);
    strip_preprocessor(&mut clean, &mut out);
    let clean = String::from_utf8_lossy(&clean);

    let mut depth = 0usize;
    let mut parens = 0usize;
    let mut line = 1;
    let mut stmt = Stmt::default();
    let mut after: Option<AfterBlock> = None;

    for c in clean.chars() {
        if depth > 0 {
            match c {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        stmt.clear();
                        parens = 0;
                    }
                }
                _ => {}
            }
        } else {
            match c {
                '(' => {
                    parens += 1;
                    stmt.push(c, line);
                }
                ')' => {
                    parens = parens.saturating_sub(1);
                    stmt.push(c, line);
                }
                '{' if parens == 0 => {
                    after = match after {
                        // nested aggregate inside a declarator list, keep outer state
                        Some(a) => {
                            on_open(&stmt, &mut out);
                            Some(a)
                        }
                        None => {
                            let a = on_open(&stmt, &mut out);
                            match a {
                                AfterBlock::Aggregate { .. } => Some(a),
                                AfterBlock::Skip if stmt.text.trim_end().ends_with('=') => Some(a),
                                AfterBlock::Skip => None,
                            }
                        }
                    };
                    depth = 1;
                    stmt.clear();
                }
                ';' if parens == 0 => {
                    on_semicolon(&stmt, after.take(), &mut out);
                    stmt.clear();
                }
                '}' => stmt.clear(),
                _ => stmt.push(c, line),
            }
        }
        if c == '\n' {
            line += 1;
        }
    }
    out.sort_by(|a, b| a.2.cmp(&b.2).then_with(|| a.0.cmp(&b.0)));
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use SymbolKind::*;

    fn names(src: &str) -> Vec<(String, SymbolKind, usize)> {
        scan_definitions(src)
    }

    fn has(src: &str, name: &str, kind: SymbolKind, line: usize) {
        let found = names(src);
        assert!(
            found.contains(&(name.to_string(), kind, line)),
            "missing {name} {kind:?}@{line} in {found:?}"
        );
    }

    #[test]
    fn function_and_struct() {
        let src = "static int foo(void)\n{\n\treturn 0;\n}\n\nstruct bar {\n\tint x;\n};\n";
        assert_eq!(names(src), vec![("foo".into(), Function, 1), ("bar".into(), Struct, 6)]);
    }

    #[test]
    fn kernel_style_function_with_attributes() {
        let src = "static int __init nf_tables_module_init(void)\n{\n}\n";
        has(src, "nf_tables_module_init", Function, 1);
        let src = "static void\nnft_set_destroy(const struct nft_ctx *ctx,\n\t\tstruct nft_set *set)\n{\n}\n";
        has(src, "nft_set_destroy", Function, 2);
    }

    #[test]
    fn macros_including_conditional_branches() {
        let src = "#ifdef CONFIG_X\n#define A 1\n#else\n#define A 2\n#endif\n#define LONG(x) \\\n\t((x) + 1)\n";
        let found = names(src);
        assert_eq!(found.iter().filter(|e| e.0 == "A").count(), 2);
        has(src, "LONG", Macro, 6);
    }

    #[test]
    fn typedefs() {
        has("typedef unsigned int u32_t;\n", "u32_t", Typedef, 1);
        has("typedef int (*handler_fn)(int);\n", "handler_fn", Typedef, 1);
        let src = "typedef struct nft_pair {\n\tint a;\n} nft_pair_t;\n";
        has(src, "nft_pair", Struct, 1);
        has(src, "nft_pair_t", Typedef, 3);
        has("typedef struct {\n int a;\n} anon_t;\n", "anon_t", Typedef, 3);
    }

    #[test]
    fn globals_and_initializers() {
        has("static int counter;\n", "counter", Global, 1);
        has("int a = 3, b;\n", "b", Global, 1);
        let src = "static const struct nft_expr_ops nft_cmp_ops __read_mostly = {\n\t.size = 4,\n};\n";
        has(src, "nft_cmp_ops", Global, 1);
        has("static char buf[64];\n", "buf", Global, 1);
        assert!(names("static char buf[64];\n").iter().all(|e| e.0 != "char"));
    }

    #[test]
    fn declarations_are_not_definitions() {
        let src = "extern int x;\nstruct foo;\nint bar(int);\nEXPORT_SYMBOL(bar);\n";
        assert!(names(src).is_empty(), "{:?}", names(src));
    }

    #[test]
    fn braces_in_comments_and_strings_are_ignored() {
        let src = "/* { */\nstatic const char *s = \"}{\";\n// }\nint after(void) { return '{'; }\n";
        has(src, "s", Global, 2);
        has(src, "after", Function, 4);
    }

    #[test]
    fn union_and_enum() {
        has("union u {\n int a;\n};\n", "u", Union, 1);
        has("enum nft_verdicts {\n NFT_CONTINUE = -1,\n};\n", "nft_verdicts", Enum, 1);
    }

    #[test]
    fn tag_on_previous_line_of_brace() {
        has("struct split\n{\n int a;\n};\n", "split", Struct, 1);
    }

    #[test]
    fn locals_inside_bodies_are_ignored() {
        let src = "int f(void)\n{\n\tint local = 0;\n\tstruct x { int a; } y;\n\treturn local;\n}\n";
        assert_eq!(names(src), vec![("f".into(), Function, 1)]);
    }
}
