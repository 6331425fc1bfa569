//! Debugger machine-interface (MI) output records.
//!
//! ```text
//! line     = [token] ("^" | "*" | "+" | "=") class ("," result)*
//!          | ("~" | "@" | "&") c-string
//!          | "(gdb)"
//! result   = variable "=" value
//! value    = c-string | "{" [result ("," result)*] "}" | "[" [value|result ("," ...)*] "]"
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiClass {
    Result,
    ExecAsync,
    StatusAsync,
    NotifyAsync,
    ConsoleStream,
    TargetStream,
    LogStream,
}

impl MiClass {
    fn prefix(self) -> char {
        match self {
            MiClass::Result => '^',
            MiClass::ExecAsync => '*',
            MiClass::StatusAsync => '+',
            MiClass::NotifyAsync => '=',
            MiClass::ConsoleStream => '~',
            MiClass::TargetStream => '@',
            MiClass::LogStream => '&',
        }
    }

    pub fn is_stream(self) -> bool {
        matches!(self, MiClass::ConsoleStream | MiClass::TargetStream | MiClass::LogStream)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum MiValue {
    Const(String),
    Tuple(Vec<(String, MiValue)>),
    /// list of bare values, `[]` included
    List(Vec<MiValue>),
    /// list of `name=value` results
    ResultList(Vec<(String, MiValue)>),
}

impl MiValue {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            MiValue::Const(s) => Some(s),
            _ => None,
        }
    }

    /// First field named `key` of a tuple or result list.
    pub fn get(&self, key: &str) -> Option<&MiValue> {
        match self {
            MiValue::Tuple(fields) | MiValue::ResultList(fields) => {
                fields.iter().find(|(k, _)| k == key).map(|(_, v)| v)
            }
            _ => None,
        }
    }

    pub fn items(&self) -> Vec<&MiValue> {
        match self {
            MiValue::List(items) => items.iter().collect(),
            MiValue::ResultList(fields) => fields.iter().map(|(_, v)| v).collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiRecord {
    pub token: Option<u64>,
    pub class: MiClass,
    /// result or async class (`done`, `stopped`, ...); empty for streams
    pub kind: String,
    pub payload: Vec<(String, MiValue)>,
    /// unescaped stream text
    pub text: Option<String>,
}

impl MiRecord {
    pub fn get(&self, key: &str) -> Option<&MiValue> {
        self.payload.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.get(key).and_then(MiValue::as_str)
    }

    pub fn is_result(&self, kind: &str) -> bool {
        self.class == MiClass::Result && self.kind == kind
    }
}

/// One parsed output line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MiLine {
    Record(MiRecord),
    /// the `(gdb)` end-of-output marker
    Prompt,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed MI record at column {column}: {reason}: {line:?}")]
pub struct MalformedRecord {
    pub line: String,
    pub column: usize,
    pub reason: String,
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<u8> {
        self.src.as_bytes().get(self.pos).copied()
    }

    fn fail<T>(&self, reason: impl Into<String>) -> Result<T, MalformedRecord> {
        Err(MalformedRecord { line: self.src.to_string(), column: self.pos, reason: reason.into() })
    }

    fn expect(&mut self, c: u8) -> Result<(), MalformedRecord> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(format!("expected `{}`", c as char))
        }
    }

    fn word(&mut self) -> &'a str {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || matches!(c, b'_' | b'-' | b'.') {
                self.pos += 1;
            } else {
                break;
            }
        }
        &self.src[start..self.pos]
    }

    fn cstring(&mut self) -> Result<String, MalformedRecord> {
        self.expect(b'"')?;
        let mut out: Vec<u8> = Vec::new();
        loop {
            let Some(c) = self.peek() else {
                return self.fail("unterminated string");
            };
            self.pos += 1;
            match c {
                b'"' => break,
                b'\\' => {
                    let Some(e) = self.peek() else {
                        return self.fail("dangling escape");
                    };
                    self.pos += 1;
                    match e {
                        b'n' => out.push(b'\n'),
                        b't' => out.push(b'\t'),
                        b'r' => out.push(b'\r'),
                        b'a' => out.push(0x07),
                        b'b' => out.push(0x08),
                        b'f' => out.push(0x0c),
                        b'v' => out.push(0x0b),
                        b'e' => out.push(0x1b),
                        b'0'..=b'7' => {
                            let mut v = (e - b'0') as u32;
                            for _ in 0..2 {
                                match self.peek() {
                                    Some(d @ b'0'..=b'7') => {
                                        v = v * 8 + (d - b'0') as u32;
                                        self.pos += 1;
                                    }
                                    _ => break,
                                }
                            }
                            out.push(v as u8);
                        }
                        other => out.push(other),
                    }
                }
                _ => out.push(c),
            }
        }
        Ok(String::from_utf8_lossy(&out).into_owned())
    }

    fn result(&mut self) -> Result<(String, MiValue), MalformedRecord> {
        let name = self.word();
        if name.is_empty() {
            return self.fail("expected variable name");
        }
        self.expect(b'=')?;
        Ok((name.to_string(), self.value()?))
    }

    fn value(&mut self) -> Result<MiValue, MalformedRecord> {
        match self.peek() {
            Some(b'"') => Ok(MiValue::Const(self.cstring()?)),
            Some(b'{') => {
                self.pos += 1;
                let mut fields = Vec::new();
                if self.peek() == Some(b'}') {
                    self.pos += 1;
                    return Ok(MiValue::Tuple(fields));
                }
                loop {
                    fields.push(self.result()?);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b'}') => {
                            self.pos += 1;
                            return Ok(MiValue::Tuple(fields));
                        }
                        _ => return self.fail("expected `,` or `}` in tuple"),
                    }
                }
            }
            Some(b'[') => {
                self.pos += 1;
                if self.peek() == Some(b']') {
                    self.pos += 1;
                    return Ok(MiValue::List(Vec::new()));
                }
                let named = !matches!(self.peek(), Some(b'"') | Some(b'{') | Some(b'['));
                let mut values = Vec::new();
                let mut results = Vec::new();
                loop {
                    if named {
                        results.push(self.result()?);
                    } else {
                        values.push(self.value()?);
                    }
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b']') => {
                            self.pos += 1;
                            return Ok(if named { MiValue::ResultList(results) } else { MiValue::List(values) });
                        }
                        _ => return self.fail("expected `,` or `]` in list"),
                    }
                }
            }
            _ => self.fail("expected value"),
        }
    }
}

/// Parse one complete MI output line (trailing whitespace ignored).
pub fn parse_mi_record(line: &str) -> Result<MiLine, MalformedRecord> {
    let line = line.trim_end_matches(['\r', '\n', ' ']);
    if line == "(gdb)" {
        return Ok(MiLine::Prompt);
    }
    let mut cur = Cursor { src: line, pos: 0 };
    let digits = cur.src.bytes().take_while(u8::is_ascii_digit).count();
    let token = if digits > 0 {
        cur.pos = digits;
        Some(line[..digits].parse::<u64>().or_else(|_| cur.fail("token out of range"))?)
    } else {
        None
    };
    let class = match cur.peek() {
        Some(b'^') => MiClass::Result,
        Some(b'*') => MiClass::ExecAsync,
        Some(b'+') => MiClass::StatusAsync,
        Some(b'=') => MiClass::NotifyAsync,
        Some(b'~') => MiClass::ConsoleStream,
        Some(b'@') => MiClass::TargetStream,
        Some(b'&') => MiClass::LogStream,
        _ => return cur.fail("unknown record prefix"),
    };
    cur.pos += 1;
    if class.is_stream() {
        if token.is_some() {
            return cur.fail("stream records carry no token");
        }
        let text = cur.cstring()?;
        if cur.pos != line.len() {
            return cur.fail("trailing data after stream string");
        }
        return Ok(MiLine::Record(MiRecord { token, class, kind: String::new(), payload: Vec::new(), text: Some(text) }));
    }
    let kind = cur.word().to_string();
    if kind.is_empty() {
        return cur.fail("missing record class");
    }
    let mut payload = Vec::new();
    while cur.pos < line.len() {
        cur.expect(b',')?;
        payload.push(cur.result()?);
    }
    Ok(MiLine::Record(MiRecord { token, class, kind, payload, text: None }))
}

/// Quote `s` as an MI c-string.
pub fn quote_cstring(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if (c as u32) < 0x20 || c == '\x7f' => out.push_str(&format!("\\{:03o}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn write_value(out: &mut String, v: &MiValue) {
    match v {
        MiValue::Const(s) => out.push_str(&quote_cstring(s)),
        MiValue::Tuple(fields) => {
            out.push('{');
            write_results(out, fields);
            out.push('}');
        }
        MiValue::List(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(out, item);
            }
            out.push(']');
        }
        MiValue::ResultList(fields) => {
            out.push('[');
            write_results(out, fields);
            out.push(']');
        }
    }
}

fn write_results(out: &mut String, fields: &[(String, MiValue)]) {
    for (i, (k, v)) in fields.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(k);
        out.push('=');
        write_value(out, v);
    }
}

impl fmt::Display for MiRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        if let Some(t) = self.token {
            out.push_str(&t.to_string());
        }
        out.push(self.class.prefix());
        if self.class.is_stream() {
            out.push_str(&quote_cstring(self.text.as_deref().unwrap_or("")));
        } else {
            out.push_str(&self.kind);
            for (k, v) in &self.payload {
                out.push(',');
                out.push_str(k);
                out.push('=');
                write_value(&mut out, v);
            }
        }
        f.write_str(&out)
    }
}

/// Serialize a record back to its single-line wire form.
pub fn serialize_mi_record(r: &MiRecord) -> String {
    r.to_string()
}
