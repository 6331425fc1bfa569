//! Just enough POSIX shell syntax for the mock guest: command lists,
//! pipelines and output redirection.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Connector {
    Always,
    IfOk,
    IfFailed,
}

/// Split on unquoted separator characters. `f` sees each unquoted char with
/// the text before and from it, and returns how many chars form a separator.
fn split_unquoted(line: &str, mut f: impl FnMut(char, &str, &str) -> Option<(usize, Connector)>) -> Vec<(Connector, String)> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut pending = Connector::Always;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    let mut iter = line.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if escaped {
            escaped = false;
            cur.push(c);
            continue;
        }
        match quote {
            Some(q) => {
                if c == q {
                    quote = None;
                } else if c == '\\' && q == '"' {
                    escaped = true;
                }
                cur.push(c);
            }
            None => {
                if c == '\'' || c == '"' {
                    quote = Some(c);
                    cur.push(c);
                } else if c == '\\' {
                    escaped = true;
                    cur.push(c);
                } else if let Some((len, conn)) = f(c, &line[..i], &line[i..]) {
                    out.push((pending, std::mem::take(&mut cur)));
                    pending = conn;
                    for _ in 1..len {
                        iter.next();
                    }
                } else {
                    cur.push(c);
                }
            }
        }
    }
    out.push((pending, cur));
    out.into_iter()
        .map(|(c, s)| (c, s.trim().to_string()))
        .filter(|(_, s)| !s.is_empty())
        .collect()
}

/// Split a command line into list elements, each with the connector that
/// precedes it.
pub(super) fn split_list(line: &str) -> Vec<(Connector, String)> {
    split_unquoted(line, |c, before, rest| match c {
        ';' => Some((1, Connector::Always)),
        '&' if rest.starts_with("&&") => Some((2, Connector::IfOk)),
        '|' if rest.starts_with("||") => Some((2, Connector::IfFailed)),
        '&' if !before.ends_with('>') => Some((1, Connector::Always)),
        _ => None,
    })
}

pub(super) fn split_pipeline(segment: &str) -> Vec<String> {
    split_unquoted(segment, |c, _, _| (c == '|').then_some((1, Connector::Always)))
        .into_iter()
        .map(|(_, s)| s)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(super) struct Redirect {
    pub path: String,
    pub append: bool,
}

/// Pull stdout redirections out of a word list. Redirections of other
/// descriptors are dropped.
pub(super) fn extract_redirect(words: Vec<String>) -> (Vec<String>, Option<Redirect>) {
    let mut out = Vec::new();
    let mut redirect = None;
    let mut it = words.into_iter();
    while let Some(w) = it.next() {
        let (fd, rest) = match w.find('>') {
            Some(p) if w[..p].chars().all(|c| c.is_ascii_digit()) => (&w[..p], &w[p..]),
            _ => {
                out.push(w);
                continue;
            }
        };
        let append = rest.starts_with(">>");
        let target = rest.trim_start_matches('>');
        let target = if target.is_empty() { it.next().unwrap_or_default() } else { target.to_string() };
        if target.starts_with('&') {
            continue;
        }
        if fd.is_empty() || fd == "1" {
            redirect = Some(Redirect { path: target, append });
        }
    }
    (out, redirect)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_respect_quotes() {
        let l = split_list("echo 'a;b' && false || echo \"x && y\"; ls");
        assert_eq!(
            l,
            vec![
                (Connector::Always, "echo 'a;b'".to_string()),
                (Connector::IfOk, "false".to_string()),
                (Connector::IfFailed, "echo \"x && y\"".to_string()),
                (Connector::Always, "ls".to_string()),
            ]
        );
        assert_eq!(split_pipeline("cat f | grep 'a|b'"), vec!["cat f", "grep 'a|b'"]);
        assert_eq!(split_list("./poc 2>&1").len(), 1);
    }

    #[test]
    fn redirects() {
        let w = |s: &str| s.split(' ').map(str::to_string).collect::<Vec<_>>();
        assert_eq!(
            extract_redirect(w("echo hi > /tmp/x")),
            (w("echo hi"), Some(Redirect { path: "/tmp/x".into(), append: false }))
        );
        assert_eq!(
            extract_redirect(w("echo hi >>/tmp/x 2>&1")),
            (w("echo hi"), Some(Redirect { path: "/tmp/x".into(), append: true }))
        );
        assert_eq!(extract_redirect(w("cat f 2>/dev/null")), (w("cat f"), None));
    }
}
