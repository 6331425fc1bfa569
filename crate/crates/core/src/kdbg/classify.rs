//! Classification of debugger commands that alter guest state.
//!
//! Pure functions of the command text, so a ledger can be rebuilt from a
//! trace by re-running them over the recorded commands.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationCategory {
    MemoryWrite,
    RegisterWrite,
    FunctionCall,
    ExpressionAssignment,
}

const PRINT_WORDS: &[&str] = &["print", "p", "output", "inspect", "call"];
const NON_CALL_IDENTS: &[&str] = &[
    "sizeof", "typeof", "__typeof__", "_Alignof", "alignof", "__alignof__", "offsetof", "__builtin_offsetof",
];

/// Blank the contents of string and character literals.
fn blank_literals(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for c in s.chars() {
        match quote {
            Some(q) => {
                if escaped {
                    escaped = false;
                    out.push(' ');
                } else if c == '\\' {
                    escaped = true;
                    out.push(' ');
                } else if c == q {
                    quote = None;
                    out.push(c);
                } else {
                    out.push(' ');
                }
            }
            None => {
                if c == '"' || c == '\'' {
                    quote = Some(c);
                }
                out.push(c);
            }
        }
    }
    out
}

/// Byte offset of the first assignment operator `=` (plain or compound),
/// skipping `==`, `!=`, `<=` and `>=`.
fn assignment_at(expr: &str) -> Option<usize> {
    let b = expr.as_bytes();
    let mut i = 0;
    while i < b.len() {
        if b[i] == b'=' {
            if b.get(i + 1) == Some(&b'=') {
                i += 2;
                continue;
            }
            let prev = if i > 0 { b[i - 1] } else { 0 };
            let shift = i >= 2 && b[i - 2] == prev && matches!(prev, b'<' | b'>');
            if matches!(prev, b'!' | b'<' | b'>' | b'=') && !shift {
                i += 1;
                continue;
            }
            return Some(i);
        }
        i += 1;
    }
    None
}

/// Name of the first function called in `expr`, if any.
pub(crate) fn called_function(expr: &str) -> Option<String> {
    let clean = blank_literals(expr);
    first_call(&clean).map(|(s, e)| clean[s..e].to_string())
}

fn has_call(expr: &str) -> bool {
    first_call(expr).is_some()
}

fn first_call(expr: &str) -> Option<(usize, usize)> {
    let b = expr.as_bytes();
    let mut i = 0;
    while i < b.len() {
        if b[i].is_ascii_alphabetic() || b[i] == b'_' {
            let start = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            let ident = &expr[start..i];
            let preceded_by_dollar = start > 0 && b[start - 1] == b'$';
            let mut j = i;
            while j < b.len() && b[j] == b' ' {
                j += 1;
            }
            if j < b.len() && b[j] == b'(' && !preceded_by_dollar && !NON_CALL_IDENTS.contains(&ident) {
                return Some((start, i));
            }
        } else if b[i].is_ascii_digit() {
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
        } else {
            i += 1;
        }
    }
    None
}

/// Split an assignment expression into target and value text. Compound
/// operators are kept off the target.
pub(crate) fn split_assignment(expr: &str) -> Option<(String, String)> {
    let clean = blank_literals(expr);
    let at = assignment_at(&clean)?;
    let lhs = expr[..at].trim_end_matches(['+', '-', '*', '/', '%', '&', '|', '^', '<', '>']).trim();
    Some((lhs.to_string(), expr[at + 1..].trim().to_string()))
}

/// Start of the assignment target ending at `head`'s end: just past the last
/// unmatched `(` or top-level `,`.
fn lhs_start(head: &str) -> usize {
    let mut depth = 0usize;
    for (i, c) in head.char_indices().rev() {
        match c {
            ')' | ']' => depth += 1,
            '(' | '[' if depth == 0 => return i + 1,
            '(' | '[' => depth -= 1,
            ',' if depth == 0 => return i + 1,
            _ => {}
        }
    }
    0
}

fn target_category(lhs: &str) -> MutationCategory {
    let lhs = lhs.trim_start().trim_start_matches('(').trim_start();
    if lhs.starts_with('$') {
        MutationCategory::RegisterWrite
    } else if lhs.starts_with('*') || lhs.starts_with('{') {
        MutationCategory::MemoryWrite
    } else {
        MutationCategory::ExpressionAssignment
    }
}

/// Classify an evaluated expression (`print` argument, MI
/// `-data-evaluate-expression` operand). Calls take precedence over
/// assignments so that one command yields one category.
pub fn classify_expression(expr: &str) -> Option<MutationCategory> {
    let clean = blank_literals(expr);
    if has_call(&clean) {
        return Some(MutationCategory::FunctionCall);
    }
    if let Some(at) = assignment_at(&clean) {
        let lhs_start = lhs_start(&clean[..at]);
        let lhs = clean[lhs_start..at].trim_end_matches(['+', '-', '*', '/', '%', '&', '|', '^', '<', '>']);
        return Some(target_category(lhs));
    }
    if clean.contains("++") || clean.contains("--") {
        return Some(MutationCategory::ExpressionAssignment);
    }
    None
}

/// Split off the leading command word; `print/x` style format suffixes stay
/// attached to the word and are removed.
fn split_word(cmd: &str) -> (&str, &str) {
    let cmd = cmd.trim_start();
    let end = cmd.find(|c: char| c.is_whitespace()).unwrap_or(cmd.len());
    let (word, rest) = cmd.split_at(end);
    let word = word.split('/').next().unwrap_or(word);
    (word, rest.trim_start())
}

fn unquote_mi(arg: &str) -> String {
    let arg = arg.trim();
    if arg.len() >= 2 && arg.starts_with('"') && arg.ends_with('"') {
        let line = format!("~{arg}");
        if let Ok(super::mi::MiLine::Record(r)) = super::mi::parse_mi_record(&line) {
            return r.text.unwrap_or_default();
        }
    }
    arg.to_string()
}

fn classify_mi(cmd: &str) -> Option<MutationCategory> {
    let (word, rest) = split_word(cmd);
    match word {
        "-interpreter-exec" => {
            let (interp, inner) = split_word(rest);
            if interp == "console" || interp == "cli" {
                classify_command(&unquote_mi(inner))
            } else {
                None
            }
        }
        w if w.starts_with("-data-write-memory") => Some(MutationCategory::MemoryWrite),
        w if w.starts_with("-data-write-register") => Some(MutationCategory::RegisterWrite),
        "-exec-return" | "-exec-jump" => Some(MutationCategory::RegisterWrite),
        "-var-assign" => Some(MutationCategory::ExpressionAssignment),
        "-data-evaluate-expression" => classify_expression(&unquote_mi(rest)),
        _ => None,
    }
}

/// Classify a raw debugger command, CLI or MI (`-` prefixed, optional
/// numeric token). `None` for commands that only read state.
pub fn classify_command(command: &str) -> Option<MutationCategory> {
    let cmd = command.trim();
    let cmd = cmd.trim_start_matches(|c: char| c.is_ascii_digit());
    if cmd.starts_with('-') {
        return classify_mi(cmd);
    }
    let (word, rest) = split_word(cmd);
    match word {
        "call" => Some(MutationCategory::FunctionCall),
        "set" => {
            let (sub, after) = split_word(rest);
            let target = if sub == "var" || sub == "variable" { after } else { rest };
            let clean = blank_literals(target);
            let at = assignment_at(&clean)?;
            if has_call(&clean) {
                return Some(MutationCategory::FunctionCall);
            }
            Some(target_category(&clean[..at]))
        }
        "jump" | "j" | "return" => Some(MutationCategory::RegisterWrite),
        w if PRINT_WORDS.contains(&w) => classify_expression(rest),
        _ => None,
    }
}

/// Classify the text given to an inspect request: a bare expression, or a
/// print-family command wrapping one.
pub fn classify_inspect(text: &str) -> Option<MutationCategory> {
    let (word, _) = split_word(text);
    if PRINT_WORDS.contains(&word) {
        classify_command(text)
    } else {
        classify_expression(text)
    }
}

#[cfg(test)]
mod tests {
    use super::MutationCategory::*;
    use super::*;

    #[test]
    fn classification_table() {
        let cases: &[(&str, Option<MutationCategory>)] = &[
            ("call some_kernel_fn()", Some(FunctionCall)),
            ("info threads", None),
            ("set $rip = 0x0", Some(RegisterWrite)),
            ("set var $rax=1", Some(RegisterWrite)),
            ("set variable obj->len = 0", Some(ExpressionAssignment)),
            ("set obj->refcnt.refs.counter = 0", Some(ExpressionAssignment)),
            ("set *(int *)0xffff888012345678 = 5", Some(MemoryWrite)),
            ("set {int}0xffff888012345678 = 5", Some(MemoryWrite)),
            ("set pagination off", None),
            ("set print pretty on", None),
            ("print size", None),
            ("p obj->len = 0", Some(ExpressionAssignment)),
            ("p/x obj->len", None),
            ("p obj->len == 0", None),
            ("p a != b && c <= d && e >= f", None),
            ("p x <<= 2", Some(ExpressionAssignment)),
            ("p x += 1", Some(ExpressionAssignment)),
            ("p i++", Some(ExpressionAssignment)),
            ("p sizeof(struct sk_buff)", None),
            ("p nft_set_destroy(0)", Some(FunctionCall)),
            ("p (int)x", None),
            ("output \"a=b\"", None),
            ("jump *0xffffffff81000000", Some(RegisterWrite)),
            ("return", Some(RegisterWrite)),
            ("bt", None),
            ("x/16xb 0xffff888012345678", None),
            ("-data-write-memory-bytes 0x1000 00ff", Some(MemoryWrite)),
            ("-data-write-register-values x 0 1", Some(RegisterWrite)),
            ("7-exec-return", Some(RegisterWrite)),
            ("-data-evaluate-expression \"obj->len = 0\"", Some(ExpressionAssignment)),
            ("-data-evaluate-expression obj->len", None),
            ("-interpreter-exec console \"call f()\"", Some(FunctionCall)),
            ("-interpreter-exec console \"info registers\"", None),
            ("-break-insert nft_set_destroy", None),
        ];
        for (cmd, expected) in cases {
            assert_eq!(classify_command(cmd), *expected, "{cmd}");
        }
    }

    #[test]
    fn assignment_and_call_helpers() {
        assert_eq!(split_assignment("obj->len = 0"), Some(("obj->len".into(), "0".into())));
        assert_eq!(split_assignment("x <<= 2"), Some(("x".into(), "2".into())));
        assert_eq!(split_assignment("a == b"), None);
        assert_eq!(called_function("nft_set_destroy(0)"), Some("nft_set_destroy".into()));
        assert_eq!(called_function("sizeof(x) + $rip"), None);
        assert_eq!(called_function("\"f(\""), None);
    }

    #[test]
    fn inspect_accepts_bare_and_print_forms() {
        assert_eq!(classify_inspect("size"), None);
        assert_eq!(classify_inspect("obj->len = 0"), Some(ExpressionAssignment));
        assert_eq!(classify_inspect("p obj->len = 0"), Some(ExpressionAssignment));
        assert_eq!(classify_inspect("$rip = 0"), Some(RegisterWrite));
        assert_eq!(classify_inspect("*(long *)0x10 = 0"), Some(MemoryWrite));
    }
}
