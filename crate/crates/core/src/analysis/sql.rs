//! SQL cell scanning: a lexer good enough to find table-like identifiers
//! after FROM/JOIN, skipping CTE names, plus a structural syntax check.

use std::collections::BTreeSet;

use super::SyntaxError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    /// Quoted identifier (`"x"` or `` `x` ``), stored unquoted.
    Quoted(String),
    Literal,
    Punct(char),
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, SyntaxError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '\n' => {
                line += 1;
                i += 1;
            }
            c if c.is_whitespace() => i += 1,
            '-' if chars.get(i + 1) == Some(&'-') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '/' if chars.get(i + 1) == Some(&'*') => {
                let start = line;
                i += 2;
                loop {
                    if i + 1 >= chars.len() {
                        return Err(SyntaxError { line: start, message: "unterminated block comment".into() });
                    }
                    if chars[i] == '\n' {
                        line += 1;
                    }
                    if chars[i] == '*' && chars[i + 1] == '/' {
                        i += 2;
                        break;
                    }
                    i += 1;
                }
            }
            '\'' | '"' | '`' => {
                let start = line;
                let mut text = String::new();
                i += 1;
                loop {
                    if i >= chars.len() {
                        return Err(SyntaxError { line: start, message: "unterminated quoted text".into() });
                    }
                    if chars[i] == c {
                        // Doubled quote escapes itself.
                        if chars.get(i + 1) == Some(&c) {
                            text.push(c);
                            i += 2;
                            continue;
                        }
                        i += 1;
                        break;
                    }
                    if chars[i] == '\n' {
                        line += 1;
                    }
                    text.push(chars[i]);
                    i += 1;
                }
                out.push((if c == '\'' { Tok::Literal } else { Tok::Quoted(text) }, start));
            }
            c if c.is_alphanumeric() || c == '_' || c == '$' || c == '@' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || matches!(chars[i], '_' | '$' | '@')) {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                if word.chars().next().unwrap().is_ascii_digit() {
                    out.push((Tok::Literal, line));
                } else {
                    out.push((Tok::Word(word), line));
                }
            }
            _ => {
                out.push((Tok::Punct(c), line));
                i += 1;
            }
        }
    }
    Ok(out)
}

fn is_kw(t: &Tok, kw: &str) -> bool {
    matches!(t, Tok::Word(w) if w.eq_ignore_ascii_case(kw))
}

const RESERVED: &[&str] = &[
    "select", "where", "group", "order", "limit", "having", "join", "inner", "left", "right",
    "full", "outer", "cross", "on", "using", "union", "except", "intersect", "as", "lateral",
    "natural", "window", "qualify", "with", "values", "unnest",
];

pub fn check(src: &str) -> Result<(), SyntaxError> {
    let toks = lex(src)?;
    check_tokens(&toks)
}

fn check_tokens(toks: &[(Tok, usize)]) -> Result<(), SyntaxError> {
    let mut depth: Vec<usize> = Vec::new();
    for (t, line) in toks {
        match t {
            Tok::Punct('(') => depth.push(*line),
            Tok::Punct(')') if depth.pop().is_none() => {
                return Err(SyntaxError { line: *line, message: "unmatched `)`".into() });
            }
            _ => {}
        }
    }
    if let Some(line) = depth.last() {
        return Err(SyntaxError { line: *line, message: "`(` was never closed".into() });
    }
    if let Some((Tok::Word(first), line)) = toks.first() {
        let known = ["select", "with", "insert", "update", "delete", "create", "drop", "alter", "show", "describe", "explain", "values", "merge", "replace", "truncate", "use", "set"];
        if !known.iter().any(|k| first.eq_ignore_ascii_case(k)) {
            return Err(SyntaxError { line: *line, message: format!("unexpected `{first}` at start of statement") });
        }
    } else if let Some((_, line)) = toks.first() {
        return Err(SyntaxError { line: *line, message: "statement must start with a keyword".into() });
    }
    Ok(())
}

/// Identifier (possibly dotted) starting at `i`; returns it and the index
/// after it.
fn qualified_name(toks: &[(Tok, usize)], mut i: usize) -> Option<(String, usize)> {
    let mut parts = Vec::new();
    loop {
        match toks.get(i).map(|t| &t.0) {
            Some(Tok::Word(w)) if parts.is_empty() && RESERVED.iter().any(|r| w.eq_ignore_ascii_case(r)) => return None,
            Some(Tok::Word(w)) | Some(Tok::Quoted(w)) => parts.push(w.clone()),
            _ => break,
        }
        i += 1;
        if matches!(toks.get(i).map(|t| &t.0), Some(Tok::Punct('.'))) {
            i += 1;
        } else {
            break;
        }
    }
    if parts.is_empty() {
        None
    } else {
        Some((parts.join("."), i))
    }
}

/// Table-like identifiers that follow FROM / JOIN (including comma lists),
/// excluding names introduced by WITH.
pub fn table_references(src: &str) -> Result<BTreeSet<String>, SyntaxError> {
    let toks = lex(src)?;
    check_tokens(&toks)?;
    let mut ctes = BTreeSet::new();
    for w in toks.windows(3) {
        // `name AS (` introduces a CTE.
        if let (Tok::Word(n) | Tok::Quoted(n), true, Tok::Punct('(')) = (&w[0].0, is_kw(&w[1].0, "as"), &w[2].0) {
            ctes.insert(n.clone());
        }
    }
    let mut refs = BTreeSet::new();
    let mut i = 0;
    while i < toks.len() {
        let t = &toks[i].0;
        if is_kw(t, "from") || is_kw(t, "join") {
            let mut j = i + 1;
            while let Some((name, next)) = qualified_name(&toks, j) {
                if !ctes.contains(&name) {
                    refs.insert(name);
                }
                j = next;
                // Optional alias: `t AS x` or `t x`.
                if toks.get(j).map(|t| is_kw(&t.0, "as")).unwrap_or(false) {
                    j += 2;
                } else if let Some((Tok::Word(w), _)) = toks.get(j) {
                    if !RESERVED.iter().any(|r| w.eq_ignore_ascii_case(r)) && !w.eq_ignore_ascii_case("from") {
                        j += 1;
                    }
                }
                if is_kw(t, "from") && matches!(toks.get(j).map(|t| &t.0), Some(Tok::Punct(','))) {
                    j += 1;
                    continue;
                }
                break;
            }
            i = j.max(i + 1);
        } else {
            i += 1;
        }
    }
    Ok(refs)
}
