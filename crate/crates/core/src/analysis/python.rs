//! Python cell analysis: a tokenizer, an indentation-aware block builder
//! that doubles as the syntax check, and a scope walker.
//!
//! The grammar covered is what cross-cell dependency tracking needs:
//! module-scope assignment targets, `def`/`class` names, imports, `global`
//! declarations, and free names. Attribute mutation, `exec`, and names used
//! only inside f-string interpolations are not tracked.

use std::collections::BTreeSet;

use super::{SyntaxError, Variables};

const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
    "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global", "if",
    "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return", "try",
    "while", "with", "yield",
];

const COMPOUND: &[&str] = &[
    "if", "elif", "else", "for", "while", "try", "except", "finally", "with", "def", "class",
];

const AUG_ASSIGN: &[&str] = &[
    "+=", "-=", "*=", "/=", "//=", "%=", "**=", ">>=", "<<=", "&=", "|=", "^=", "@=",
];

const BINARY_TRAILERS: &[&str] = &[
    "+", "-", "*", "/", "//", "%", "**", "=", "==", "!=", "<", ">", "<=", ">=", ".", "&", "|",
    "^", "<<", ">>", "@", "->", ":=", "and", "or", "not", "in", "is",
];

fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Name(String),
    Number,
    Str,
    Op(&'static str),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
}

impl Token {
    fn is_op(&self, op: &str) -> bool {
        matches!(&self.tok, Tok::Op(o) if *o == op)
    }

    fn name(&self) -> Option<&str> {
        match &self.tok {
            Tok::Name(n) => Some(n),
            _ => None,
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        self.name() == Some(kw)
    }

    /// Identifier usable as a variable (not a keyword).
    fn ident(&self) -> Option<&str> {
        self.name().filter(|n| !is_keyword(n))
    }

    fn is_open(&self) -> bool {
        self.is_op("(") || self.is_op("[") || self.is_op("{")
    }

    fn is_close(&self) -> bool {
        self.is_op(")") || self.is_op("]") || self.is_op("}")
    }

    fn is_atom(&self) -> bool {
        match &self.tok {
            Tok::Number | Tok::Str => true,
            Tok::Name(n) => !is_keyword(n) || matches!(n.as_str(), "True" | "False" | "None"),
            Tok::Op(_) => false,
        }
    }
}

#[derive(Debug)]
struct LogicalLine {
    indent: usize,
    line: usize,
    tokens: Vec<Token>,
}

const OPS3: &[&str] = &["**=", "//=", ">>=", "<<=", "..."];
const OPS2: &[&str] = &[
    "->", ":=", "==", "!=", "<=", ">=", "**", "//", "<<", ">>", "+=", "-=", "*=", "/=", "%=",
    "&=", "|=", "^=", "@=",
];
const OPS1: &[&str] = &[
    "(", ")", "[", "]", "{", "}", ":", ",", ";", ".", "+", "-", "*", "/", "%", "<", ">", "=",
    "&", "|", "^", "~", "@",
];

fn err(line: usize, msg: impl Into<String>) -> SyntaxError {
    SyntaxError { line, message: msg.into() }
}

fn is_string_prefix(s: &str) -> bool {
    let lower = s.to_ascii_lowercase();
    matches!(
        lower.as_str(),
        "r" | "u" | "b" | "f" | "br" | "rb" | "fr" | "rf"
    )
}

fn tokenize(src: &str) -> Result<Vec<LogicalLine>, SyntaxError> {
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    let mut line = 1;
    let mut lines = Vec::new();
    let mut current: Vec<Token> = Vec::new();
    let mut current_indent = 0;
    let mut current_line = 1;
    let mut at_line_start = true;
    let mut brackets: Vec<(char, usize)> = Vec::new();

    while i < chars.len() {
        if at_line_start && brackets.is_empty() && current.is_empty() {
            // Measure indentation; blank and comment-only lines are skipped.
            let mut col = 0;
            let mut j = i;
            while j < chars.len() && (chars[j] == ' ' || chars[j] == '\t' || chars[j] == '\x0c') {
                col = if chars[j] == '\t' { (col / 8 + 1) * 8 } else { col + 1 };
                j += 1;
            }
            if j >= chars.len() {
                break;
            }
            match chars[j] {
                '\n' => {
                    i = j + 1;
                    line += 1;
                    continue;
                }
                '\r' => {
                    i = j + 1;
                    continue;
                }
                '#' => {
                    while j < chars.len() && chars[j] != '\n' {
                        j += 1;
                    }
                    i = j;
                    continue;
                }
                _ => {}
            }
            current_indent = col;
            current_line = line;
            at_line_start = false;
            i = j;
            continue;
        }

        let c = chars[i];
        match c {
            '\n' => {
                line += 1;
                i += 1;
                if brackets.is_empty() {
                    if !current.is_empty() {
                        lines.push(LogicalLine {
                            indent: current_indent,
                            line: current_line,
                            tokens: std::mem::take(&mut current),
                        });
                    }
                    at_line_start = true;
                }
            }
            ' ' | '\t' | '\r' | '\x0c' => i += 1,
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '\\' => {
                // Explicit line continuation.
                let mut j = i + 1;
                while j < chars.len() && chars[j] == '\r' {
                    j += 1;
                }
                if j < chars.len() && chars[j] == '\n' {
                    i = j + 1;
                    line += 1;
                } else if j >= chars.len() {
                    return Err(err(line, "unexpected end of file after line continuation"));
                } else {
                    return Err(err(line, "unexpected character after line continuation"));
                }
            }
            '"' | '\'' => {
                i = scan_string(&chars, i, &mut line)?;
                current.push(Token { tok: Tok::Str, line });
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                if i < chars.len() && (chars[i] == '"' || chars[i] == '\'') && is_string_prefix(&word)
                {
                    i = scan_string(&chars, i, &mut line)?;
                    current.push(Token { tok: Tok::Str, line });
                } else {
                    current.push(Token { tok: Tok::Name(word), line });
                }
            }
            c if c.is_ascii_digit()
                || (c == '.' && i + 1 < chars.len() && chars[i + 1].is_ascii_digit()) =>
            {
                let start = i;
                while i < chars.len() {
                    let d = chars[i];
                    let hex = chars[start..i].iter().any(|c| matches!(c, 'x' | 'X'));
                    let exponent_sign = (d == '+' || d == '-') && !hex && matches!(chars[i - 1], 'e' | 'E');
                    if d.is_alphanumeric() || d == '_' || d == '.' || exponent_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                current.push(Token { tok: Tok::Number, line });
            }
            _ => {
                let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
                let op = OPS3
                    .iter()
                    .chain(OPS2)
                    .chain(OPS1)
                    .find(|op| rest.starts_with(**op))
                    .copied()
                    .ok_or_else(|| err(line, format!("invalid character `{c}`")))?;
                match op {
                    "(" | "[" | "{" => brackets.push((c, line)),
                    ")" | "]" | "}" => {
                        let expected = match op {
                            ")" => '(',
                            "]" => '[',
                            _ => '{',
                        };
                        match brackets.pop() {
                            Some((open, _)) if open == expected => {}
                            Some((open, l)) => {
                                return Err(err(
                                    line,
                                    format!("closing `{op}` does not match `{open}` opened on line {l}"),
                                ))
                            }
                            None => return Err(err(line, format!("unmatched `{op}`"))),
                        }
                    }
                    _ => {}
                }
                i += op.chars().count();
                current.push(Token { tok: Tok::Op(op), line });
            }
        }
    }
    if let Some((open, l)) = brackets.last() {
        return Err(err(*l, format!("`{open}` was never closed")));
    }
    if !current.is_empty() {
        lines.push(LogicalLine { indent: current_indent, line: current_line, tokens: current });
    }
    Ok(lines)
}

/// Scans a string literal starting at the opening quote; returns the index
/// just past the closing quote.
fn scan_string(chars: &[char], start: usize, line: &mut usize) -> Result<usize, SyntaxError> {
    let q = chars[start];
    let open_line = *line;
    let triple = start + 2 < chars.len() && chars[start + 1] == q && chars[start + 2] == q;
    let mut i = if triple { start + 3 } else { start + 1 };
    while i < chars.len() {
        let c = chars[i];
        if c == '\\' {
            // Even raw strings cannot end on an escaped quote.
            if i + 1 < chars.len() && chars[i + 1] == '\n' {
                *line += 1;
            }
            i += 2;
            continue;
        }
        if c == '\n' {
            if !triple {
                return Err(err(open_line, "unterminated string literal"));
            }
            *line += 1;
        }
        if c == q {
            if !triple {
                return Ok(i + 1);
            }
            if i + 2 < chars.len() && chars[i + 1] == q && chars[i + 2] == q {
                return Ok(i + 3);
            }
        }
        i += 1;
    }
    Err(err(open_line, if triple { "unterminated triple-quoted string" } else { "unterminated string literal" }))
}

#[derive(Debug)]
struct Stmt {
    /// Header tokens for compound statements, the whole statement otherwise.
    tokens: Vec<Token>,
    compound: bool,
    body: Vec<Stmt>,
    line: usize,
}

impl Stmt {
    fn head(&self) -> &str {
        self.tokens.first().and_then(Token::name).unwrap_or("")
    }
}

/// Index of the first top-level `:` that ends a compound header.
fn header_colon(tokens: &[Token]) -> Option<usize> {
    let mut depth = 0i32;
    let mut lambdas = 0;
    for (i, t) in tokens.iter().enumerate() {
        if t.is_open() {
            depth += 1;
        } else if t.is_close() {
            depth -= 1;
        } else if depth == 0 && t.is_kw("lambda") {
            lambdas += 1;
        } else if depth == 0 && t.is_op(":") {
            if lambdas > 0 {
                lambdas -= 1;
            } else {
                return Some(i);
            }
        }
    }
    None
}

fn split_top_level(tokens: &[Token], sep: &str) -> Vec<Vec<Token>> {
    let mut out = vec![Vec::new()];
    let mut depth = 0i32;
    for t in tokens {
        if t.is_open() {
            depth += 1;
        } else if t.is_close() {
            depth -= 1;
        }
        if depth == 0 && t.is_op(sep) {
            out.push(Vec::new());
        } else {
            out.last_mut().unwrap().push(t.clone());
        }
    }
    out
}

fn is_compound_start(tokens: &[Token]) -> bool {
    let Some(first) = tokens.first().and_then(Token::name) else {
        return false;
    };
    if COMPOUND.contains(&first) {
        return true;
    }
    if first == "async" {
        return tokens
            .get(1)
            .map(|t| t.is_kw("def") || t.is_kw("for") || t.is_kw("with"))
            .unwrap_or(false);
    }
    // Soft keywords: `match x:` / `case p:` with nothing after the colon.
    if (first == "match" || first == "case") && tokens.len() > 1 {
        let second = &tokens[1];
        let assignment_like = second.is_op("=") || second.is_op(".") || second.is_op("(") && tokens.last().map(|t| !t.is_op(":")).unwrap_or(true);
        return !assignment_like && tokens.last().map(|t| t.is_op(":")).unwrap_or(false);
    }
    false
}

fn simple_statements(tokens: &[Token], line: usize) -> Result<Vec<Stmt>, SyntaxError> {
    let mut out = Vec::new();
    let parts = split_top_level(tokens, ";");
    let n = parts.len();
    for (k, part) in parts.into_iter().enumerate() {
        if part.is_empty() {
            // A single trailing `;` is allowed.
            if k == n - 1 && k > 0 {
                continue;
            }
            return Err(err(line, "empty statement"));
        }
        if is_compound_start(&part) {
            return Err(err(line, "compound statement not allowed here"));
        }
        check_simple(&part, line)?;
        out.push(Stmt { tokens: part, compound: false, body: Vec::new(), line });
    }
    Ok(out)
}

/// Token-adjacency checks that catch most malformed expressions.
fn check_simple(tokens: &[Token], line: usize) -> Result<(), SyntaxError> {
    check_adjacency(tokens, line)?;
    if let Some(last) = tokens.last() {
        let dangling = match &last.tok {
            Tok::Op(o) => BINARY_TRAILERS.contains(o) || AUG_ASSIGN.contains(o) || *o == ":",
            Tok::Name(n) => matches!(n.as_str(), "and" | "or" | "not" | "in" | "is" | "lambda" | "if" | "else" | "import" | "from" | "as" | "del" | "global" | "nonlocal" | "assert"),
            _ => false,
        };
        if dangling {
            return Err(err(last.line, "invalid syntax: statement ends unexpectedly"));
        }
    }
    // Assignment targets must be assignable.
    let segments = split_assignment(tokens);
    if segments.len() > 1 {
        for target in &segments[..segments.len() - 1] {
            check_target(target, line)?;
        }
        if segments.last().map(|s| s.is_empty()).unwrap_or(true) {
            return Err(err(line, "assignment without a value"));
        }
    }
    if let Some((target, _, _)) = split_augmented(tokens) {
        check_target(&target, line)?;
    }
    Ok(())
}

fn check_adjacency(tokens: &[Token], line: usize) -> Result<(), SyntaxError> {
    for w in tokens.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let both_atoms = a.is_atom() && b.is_atom();
        let str_concat = matches!(a.tok, Tok::Str) && matches!(b.tok, Tok::Str);
        if both_atoms && !str_concat {
            return Err(err(b.line.max(line), "invalid syntax: missing operator between operands"));
        }
        if a.is_close() && b.is_atom() {
            return Err(err(b.line.max(line), "invalid syntax: missing operator after bracket"));
        }
    }
    Ok(())
}

fn check_target(target: &[Token], line: usize) -> Result<(), SyntaxError> {
    if target.is_empty() {
        return Err(err(line, "assignment without a target"));
    }
    let last = target.last().unwrap();
    let literal = target.len() == 1 && (matches!(last.tok, Tok::Number | Tok::Str) || last.name().map(is_keyword).unwrap_or(false));
    if literal {
        return Err(err(line, "cannot assign to literal"));
    }
    if last.is_op(")") {
        // `f(x) = ...` is a call; `(a, b) = ...` is a tuple.
        let mut depth = 0;
        for (i, t) in target.iter().enumerate().rev() {
            if t.is_close() {
                depth += 1;
            } else if t.is_open() {
                depth -= 1;
                if depth == 0 {
                    if i > 0 && (target[i - 1].ident().is_some() || target[i - 1].is_close()) {
                        return Err(err(line, "cannot assign to function call"));
                    }
                    break;
                }
            }
        }
    }
    if target.iter().any(|t| matches!(t.tok, Tok::Op(o) if ["+", "-", "/", "%", "==", "<", ">"].contains(&o))) {
        let depth_zero_op = {
            let mut depth = 0;
            let mut found = false;
            for t in target {
                if t.is_open() {
                    depth += 1;
                } else if t.is_close() {
                    depth -= 1;
                } else if depth == 0 && matches!(t.tok, Tok::Op(o) if ["+", "-", "/", "%", "==", "<", ">"].contains(&o)) {
                    found = true;
                }
            }
            found
        };
        if depth_zero_op {
            return Err(err(line, "cannot assign to expression"));
        }
    }
    Ok(())
}

/// Splits `a = b = value` at top-level `=` (stopping at the first
/// top-level `lambda`, whose defaults also use `=`).
fn split_assignment(tokens: &[Token]) -> Vec<Vec<Token>> {
    let mut out = vec![Vec::new()];
    let mut depth = 0i32;
    let mut seen_lambda = false;
    for t in tokens {
        if t.is_open() {
            depth += 1;
        } else if t.is_close() {
            depth -= 1;
        }
        if depth == 0 && t.is_kw("lambda") {
            seen_lambda = true;
        }
        if depth == 0 && !seen_lambda && t.is_op("=") {
            out.push(Vec::new());
        } else {
            out.last_mut().unwrap().push(t.clone());
        }
    }
    out
}

fn split_augmented(tokens: &[Token]) -> Option<(Vec<Token>, &'static str, Vec<Token>)> {
    let mut depth = 0i32;
    for (i, t) in tokens.iter().enumerate() {
        if t.is_open() {
            depth += 1;
        } else if t.is_close() {
            depth -= 1;
        } else if depth == 0 {
            if let Tok::Op(o) = t.tok {
                if AUG_ASSIGN.contains(&o) {
                    return Some((tokens[..i].to_vec(), o, tokens[i + 1..].to_vec()));
                }
            }
        }
    }
    None
}

fn build_blocks(lines: &[LogicalLine]) -> Result<Vec<Stmt>, SyntaxError> {
    let mut idx = 0;
    let base = lines.first().map(|l| l.indent).unwrap_or(0);
    if base != 0 {
        return Err(err(lines[0].line, "unexpected indent"));
    }
    let stmts = parse_block(lines, &mut idx, 0)?;
    if idx < lines.len() {
        return Err(err(lines[idx].line, "unindent does not match any outer indentation level"));
    }
    Ok(stmts)
}

fn parse_block(lines: &[LogicalLine], idx: &mut usize, indent: usize) -> Result<Vec<Stmt>, SyntaxError> {
    let mut out = Vec::new();
    while *idx < lines.len() {
        let l = &lines[*idx];
        if l.indent < indent {
            break;
        }
        if l.indent > indent {
            return Err(err(l.line, "unexpected indent"));
        }
        *idx += 1;
        if is_compound_start(&l.tokens) {
            let colon = header_colon(&l.tokens)
                .ok_or_else(|| err(l.line, format!("expected `:` after `{}`", l.tokens[0].name().unwrap_or(""))))?;
            let header = l.tokens[..colon].to_vec();
            check_header(&header, l.line)?;
            let rest = &l.tokens[colon + 1..];
            let body = if rest.is_empty() {
                match lines.get(*idx) {
                    Some(next) if next.indent > indent => {
                        let child = next.indent;
                        let body = parse_block(lines, idx, child)?;
                        if let Some(after) = lines.get(*idx) {
                            if after.indent > indent && after.indent != child {
                                return Err(err(after.line, "unindent does not match any outer indentation level"));
                            }
                        }
                        body
                    }
                    Some(next) => return Err(err(next.line, "expected an indented block")),
                    None => return Err(err(l.line, "expected an indented block")),
                }
            } else {
                simple_statements(rest, l.line)?
            };
            out.push(Stmt { tokens: header, compound: true, body, line: l.line });
        } else {
            out.extend(simple_statements(&l.tokens, l.line)?);
        }
    }
    Ok(out)
}

fn check_header(header: &[Token], line: usize) -> Result<(), SyntaxError> {
    let mut toks = header;
    if toks.first().map(|t| t.is_kw("async")).unwrap_or(false) {
        toks = &toks[1..];
    }
    let kw = toks.first().and_then(Token::name).unwrap_or("");
    match kw {
        "def" => {
            if toks.get(1).and_then(Token::ident).is_none() || !toks.get(2).map(|t| t.is_op("(")).unwrap_or(false) {
                return Err(err(line, "invalid function definition"));
            }
        }
        "class" => {
            if toks.get(1).and_then(Token::ident).is_none() {
                return Err(err(line, "invalid class definition"));
            }
        }
        "for" => {
            if !toks.iter().any(|t| t.is_kw("in")) || toks.len() < 4 {
                return Err(err(line, "invalid for statement"));
            }
        }
        "if" | "elif" | "while" => {
            if toks.len() < 2 {
                return Err(err(line, format!("`{kw}` without a condition")));
            }
        }
        "else" | "try" | "finally" if toks.len() != 1 => {
            return Err(err(line, format!("unexpected tokens after `{kw}`")));
        }
        _ => {}
    }
    if toks.len() > 1 {
        check_adjacency(&toks[1..], line)?;
    }
    Ok(())
}

/// Names read and names bound by a token sequence in expression position.
#[derive(Default)]
struct ExprNames {
    refs: Vec<String>,
    walrus: Vec<String>,
}

fn expr_names(tokens: &[Token]) -> ExprNames {
    let mut out = ExprNames::default();
    let mut groups: Vec<Group> = Vec::new();
    // Lambda parameter scopes: (group depth, names).
    let mut lambdas: Vec<(usize, BTreeSet<String>)> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let t = &tokens[i];
        if t.is_open() {
            let call = i > 0 && (tokens[i - 1].ident().is_some() || tokens[i - 1].is_close() || matches!(tokens[i - 1].tok, Tok::Str));
            let bound = comprehension_targets(tokens, i);
            groups.push(Group { call, bound });
            i += 1;
            continue;
        }
        if t.is_close() {
            let depth = groups.len();
            lambdas.retain(|(d, _)| *d < depth);
            groups.pop();
            i += 1;
            continue;
        }
        if t.is_op(",") {
            let depth = groups.len();
            lambdas.retain(|(d, _)| *d != depth);
        }
        if t.is_kw("lambda") {
            let depth = groups.len();
            let mut params = BTreeSet::new();
            let mut j = i + 1;
            let mut inner = 0i32;
            let mut expect_name = true;
            while j < tokens.len() {
                let u = &tokens[j];
                if u.is_open() {
                    inner += 1;
                } else if u.is_close() {
                    inner -= 1;
                } else if inner == 0 && u.is_op(":") {
                    break;
                }
                if inner == 0 {
                    if u.is_op(",") || u.is_op("*") || u.is_op("**") {
                        expect_name = true;
                    } else if let Some(n) = u.ident() {
                        if expect_name {
                            params.insert(n.to_string());
                        } else if !is_bound(n, &groups, &lambdas) {
                            out.refs.push(n.to_string());
                        }
                        expect_name = false;
                    } else if u.is_op("=") {
                        expect_name = false;
                    }
                } else if let Some(n) = u.ident() {
                    if !is_bound(n, &groups, &lambdas) {
                        out.refs.push(n.to_string());
                    }
                }
                j += 1;
            }
            lambdas.push((depth, params));
            i = j + 1;
            continue;
        }
        if let Some(n) = t.ident() {
            let after_dot = i > 0 && tokens[i - 1].is_op(".");
            let next = tokens.get(i + 1);
            let kwarg = next.map(|x| x.is_op("=")).unwrap_or(false)
                && groups.last().map(|g| g.call).unwrap_or(false);
            let walrus = next.map(|x| x.is_op(":=")).unwrap_or(false);
            if walrus {
                out.walrus.push(n.to_string());
            } else if !after_dot && !kwarg && !is_bound(n, &groups, &lambdas) {
                out.refs.push(n.to_string());
            }
        }
        i += 1;
    }
    out
}

/// An open bracket in an expression.
struct Group {
    /// Call or subscript (as opposed to a display or parenthesized tuple).
    call: bool,
    /// Comprehension variables bound inside the bracket.
    bound: BTreeSet<String>,
}

fn is_bound(name: &str, groups: &[Group], lambdas: &[(usize, BTreeSet<String>)]) -> bool {
    groups.iter().any(|g| g.bound.contains(name)) || lambdas.iter().any(|(_, p)| p.contains(name))
}

/// Targets of `for ... in` clauses directly inside the group opened at `open`.
fn comprehension_targets(tokens: &[Token], open: usize) -> BTreeSet<String> {
    let mut bound = BTreeSet::new();
    let mut depth = 0i32;
    let mut j = open;
    let mut in_target = false;
    while j < tokens.len() {
        let t = &tokens[j];
        if t.is_open() {
            depth += 1;
        } else if t.is_close() {
            depth -= 1;
            if depth == 0 {
                break;
            }
        } else if depth == 1 {
            if t.is_kw("for") {
                in_target = true;
            } else if t.is_kw("in") {
                in_target = false;
            } else if in_target {
                if let Some(n) = t.ident() {
                    bound.insert(n.to_string());
                }
            }
        } else if in_target && depth > 1 {
            // Parenthesized tuple targets: `for (a, b) in ...`.
            if let Some(n) = t.ident() {
                bound.insert(n.to_string());
            }
        }
        j += 1;
    }
    bound
}

/// Names bound by an assignment target; everything else the target reads
/// (subscript bases, attribute owners, index expressions) goes to `refs`.
fn target_names(target: &[Token]) -> (Vec<String>, Vec<String>) {
    let mut defs = Vec::new();
    let mut refs = Vec::new();
    // Stack of bracket kinds: true when the bracket is a subscript/call.
    let mut stack: Vec<bool> = Vec::new();
    for (i, t) in target.iter().enumerate() {
        if t.is_open() {
            let accessor = i > 0 && (target[i - 1].ident().is_some() || target[i - 1].is_close());
            stack.push(accessor);
            continue;
        }
        if t.is_close() {
            stack.pop();
            continue;
        }
        let Some(n) = t.ident() else { continue };
        if i > 0 && target[i - 1].is_op(".") {
            continue;
        }
        let inside_accessor = stack.iter().any(|a| *a);
        let next = target.get(i + 1);
        let base_of_access = next.map(|x| x.is_op(".") || x.is_op("[") || x.is_op("(")).unwrap_or(false);
        if inside_accessor || base_of_access {
            refs.push(n.to_string());
        } else {
            defs.push(n.to_string());
        }
    }
    (defs, refs)
}

/// Effect of a single statement on the scope it runs in.
#[derive(Default)]
struct Effect {
    refs: Vec<String>,
    defs: Vec<String>,
    globals: Vec<String>,
    nonlocals: Vec<String>,
}

fn import_names(tokens: &[Token]) -> Vec<String> {
    let mut names = Vec::new();
    if tokens[0].is_kw("import") {
        for part in split_top_level(&tokens[1..], ",") {
            if let Some(pos) = part.iter().position(|t| t.is_kw("as")) {
                if let Some(n) = part.get(pos + 1).and_then(Token::ident) {
                    names.push(n.to_string());
                }
            } else if let Some(n) = part.first().and_then(Token::ident) {
                names.push(n.to_string());
            }
        }
    } else if let Some(pos) = tokens.iter().position(|t| t.is_kw("import")) {
        let list: Vec<Token> = tokens[pos + 1..]
            .iter()
            .filter(|t| !t.is_op("(") && !t.is_op(")"))
            .cloned()
            .collect();
        for part in split_top_level(&list, ",") {
            if let Some(p) = part.iter().position(|t| t.is_kw("as")) {
                if let Some(n) = part.get(p + 1).and_then(Token::ident) {
                    names.push(n.to_string());
                }
            } else if let Some(n) = part.first().and_then(Token::ident) {
                names.push(n.to_string());
            }
        }
    }
    names
}

fn simple_effect(tokens: &[Token]) -> Effect {
    let mut e = Effect::default();
    let head = tokens[0].name().unwrap_or("");
    match head {
        "import" | "from" => e.defs = import_names(tokens),
        "global" => e.globals = tokens[1..].iter().filter_map(Token::ident).map(String::from).collect(),
        "nonlocal" => e.nonlocals = tokens[1..].iter().filter_map(Token::ident).map(String::from).collect(),
        "pass" | "break" | "continue" => {}
        "del" | "return" | "yield" | "raise" | "assert" | "await" => {
            let names = expr_names(&tokens[1..]);
            e.refs = names.refs;
            e.defs = names.walrus;
        }
        _ => {
            if let Some((target, _, value)) = split_augmented(tokens) {
                let v = expr_names(&value);
                let (defs, trefs) = target_names(&target);
                e.refs = v.refs;
                e.refs.extend(trefs);
                e.refs.extend(defs.iter().cloned());
                e.defs = v.walrus;
                e.defs.extend(defs);
                return e;
            }
            let segments = split_assignment(tokens);
            let (targets, value) = segments.split_at(segments.len() - 1);
            let mut value = value[0].clone();
            let mut targets: Vec<Vec<Token>> = targets.to_vec();
            // Annotated assignment: `x: T = v` or bare `x: T`.
            let first = if targets.is_empty() { &mut value } else { &mut targets[0] };
            if let Some(colon) = first.iter().position(|t| t.is_op(":")) {
                let annotation = first.split_off(colon + 1);
                first.pop();
                e.refs.extend(expr_names(&annotation).refs);
                if segments.len() == 1 {
                    // Bare annotation binds nothing at runtime.
                    let (_, trefs) = target_names(first);
                    e.refs.extend(trefs);
                    return e;
                }
            }
            let v = expr_names(&value);
            e.refs.extend(v.refs);
            e.defs.extend(v.walrus);
            for t in &targets {
                let (defs, trefs) = target_names(t);
                e.refs.extend(trefs);
                e.defs.extend(defs);
            }
        }
    }
    e
}

/// Parameters of a `def` header and the expressions evaluated at
/// definition time (defaults, annotations, return annotation).
fn def_signature(header: &[Token]) -> (String, Vec<String>, Vec<String>) {
    let toks = if header[0].is_kw("async") { &header[1..] } else { header };
    let name = toks[1].name().unwrap_or_default().to_string();
    let mut params = Vec::new();
    let mut evaluated = Vec::new();
    let mut depth = 0i32;
    let mut expect_name = true;
    let mut i = 2;
    while i < toks.len() {
        let t = &toks[i];
        if t.is_open() {
            depth += 1;
            if depth == 1 {
                i += 1;
                continue;
            }
        } else if t.is_close() {
            depth -= 1;
            if depth == 0 {
                evaluated.extend(expr_names(&toks[i + 1..]).refs);
                break;
            }
        }
        if depth == 1 {
            if t.is_op(",") || t.is_op("*") || t.is_op("**") || t.is_op("/") {
                expect_name = true;
                i += 1;
                continue;
            }
            if t.is_op("=") || t.is_op(":") {
                // Default value or annotation up to the next top-level comma.
                let mut j = i + 1;
                let mut d = 0;
                while j < toks.len() {
                    let u = &toks[j];
                    if u.is_open() {
                        d += 1;
                    } else if u.is_close() {
                        if d == 0 {
                            break;
                        }
                        d -= 1;
                    } else if d == 0 && (u.is_op(",") || u.is_op("=")) {
                        break;
                    }
                    j += 1;
                }
                evaluated.extend(expr_names(&toks[i + 1..j]).refs);
                i = j;
                expect_name = false;
                continue;
            }
            if let Some(n) = t.ident() {
                if expect_name {
                    params.push(n.to_string());
                }
                expect_name = false;
            }
        }
        i += 1;
    }
    (name, params, evaluated)
}

enum Child<'a> {
    Inline(&'a [Stmt]),
    Function { name: String, params: Vec<String>, body: &'a [Stmt] },
    Class { name: String, body: &'a [Stmt] },
}

/// Effect of a compound header plus the blocks it opens.
fn compound_effect(stmt: &Stmt) -> (Effect, Child<'_>) {
    let mut e = Effect::default();
    let toks = if stmt.tokens[0].is_kw("async") { &stmt.tokens[1..] } else { &stmt.tokens[..] };
    match stmt.head() {
        _ if toks[0].is_kw("def") => {
            let (name, params, evaluated) = def_signature(&stmt.tokens);
            e.refs = evaluated;
            return (e, Child::Function { name, params, body: &stmt.body });
        }
        "class" => {
            let name = toks[1].name().unwrap_or_default().to_string();
            let bases: Vec<Token> = toks[2..].to_vec();
            // Bases are a call-style argument list; `metaclass=` is a kwarg.
            let mut with_call = vec![Token { tok: Tok::Name("__class_bases__".into()), line: stmt.line }];
            with_call.extend(bases);
            let names = expr_names(&with_call);
            e.refs = names.refs.into_iter().filter(|n| n != "__class_bases__").collect();
            return (e, Child::Class { name, body: &stmt.body });
        }
        _ if toks[0].is_kw("for") => {
            let in_pos = toks.iter().position(|t| t.is_kw("in")).unwrap_or(toks.len());
            let (defs, trefs) = target_names(&toks[1..in_pos]);
            let iter = expr_names(&toks[(in_pos + 1).min(toks.len())..]);
            e.refs = iter.refs;
            e.refs.extend(trefs);
            e.defs = defs;
            e.defs.extend(iter.walrus);
        }
        _ if toks[0].is_kw("with") => {
            for item in split_top_level(&toks[1..], ",") {
                if let Some(p) = item.iter().position(|t| t.is_kw("as")) {
                    let n = expr_names(&item[..p]);
                    e.refs.extend(n.refs);
                    let (defs, trefs) = target_names(&item[p + 1..]);
                    e.refs.extend(trefs);
                    e.defs.extend(defs);
                } else {
                    e.refs.extend(expr_names(&item).refs);
                }
            }
        }
        "except" => {
            let rest = &toks[1..];
            if let Some(p) = rest.iter().position(|t| t.is_kw("as")) {
                e.refs = expr_names(&rest[..p]).refs;
                e.defs = rest[p + 1..].iter().filter_map(Token::ident).map(String::from).collect();
            } else {
                e.refs = expr_names(rest).refs;
            }
        }
        "case" => {
            // Capture patterns bind bare names; dotted names and calls read.
            for (i, t) in toks.iter().enumerate().skip(1) {
                let Some(n) = t.ident() else { continue };
                if n == "_" || (i > 0 && toks[i - 1].is_op(".")) {
                    continue;
                }
                let next = toks.get(i + 1);
                let used = next.map(|x| x.is_op(".") || x.is_op("(")).unwrap_or(false)
                    || toks[i - 1].is_op("=")
                    || toks[..i].iter().any(|x| x.is_kw("if"));
                if used {
                    e.refs.push(n.to_string());
                } else {
                    e.defs.push(n.to_string());
                }
            }
        }
        _ => {
            let n = expr_names(&toks[1..]);
            e.refs = n.refs;
            e.defs = n.walrus;
        }
    }
    (e, Child::Inline(&stmt.body))
}

struct Deferred<'a> {
    params: Vec<String>,
    body: &'a [Stmt],
    /// Locals of enclosing function scopes (class scopes are skipped).
    enclosing: Vec<BTreeSet<String>>,
}

#[derive(Default)]
struct Walker<'a> {
    defined: BTreeSet<String>,
    referenced: BTreeSet<String>,
    deferred: Vec<Deferred<'a>>,
    /// Free names read inside function bodies, resolved once the whole
    /// cell has been walked.
    pending_free: Vec<String>,
}

impl<'a> Walker<'a> {
    /// Module or class scope: statements run in order, so a name is free
    /// when nothing visible has bound it yet.
    fn walk_ordered(&mut self, stmts: &'a [Stmt], class_scope: Option<&mut BTreeSet<String>>) {
        let mut class_scope = class_scope;
        for stmt in stmts {
            let (effect, child) = if stmt.compound {
                compound_effect(stmt)
            } else {
                (simple_effect(&stmt.tokens), Child::Inline(&[]))
            };
            for r in &effect.refs {
                let visible = self.defined.contains(r)
                    || class_scope.as_ref().map(|c| c.contains(r)).unwrap_or(false);
                if !visible {
                    self.referenced.insert(r.clone());
                }
            }
            let bind = |walker: &mut Self, name: String, cs: &mut Option<&mut BTreeSet<String>>| match cs {
                Some(c) => {
                    c.insert(name);
                }
                None => {
                    walker.defined.insert(name);
                }
            };
            for d in effect.defs {
                bind(self, d, &mut class_scope);
            }
            match child {
                Child::Inline(body) => {
                    let cs = class_scope.as_deref_mut();
                    self.walk_ordered(body, cs);
                }
                Child::Function { name, params, body } => {
                    bind(self, name, &mut class_scope);
                    self.deferred.push(Deferred { params, body, enclosing: Vec::new() });
                }
                Child::Class { name, body } => {
                    let mut locals = BTreeSet::new();
                    self.walk_ordered(body, Some(&mut locals));
                    bind(self, name, &mut class_scope);
                }
            }
        }
    }

    fn walk_function(&mut self, f: Deferred<'a>) {
        let mut locals: BTreeSet<String> = f.params.iter().cloned().collect();
        let mut globals = BTreeSet::new();
        let mut nonlocals = BTreeSet::new();
        collect_bindings(f.body, &mut locals, &mut globals, &mut nonlocals);
        for g in &globals {
            locals.remove(g);
        }
        for n in &nonlocals {
            locals.remove(n);
        }
        // Assignments under `global` create module-level names.
        let mut assigned = BTreeSet::new();
        collect_bindings(f.body, &mut assigned, &mut BTreeSet::new(), &mut BTreeSet::new());
        for g in globals.intersection(&assigned) {
            self.defined.insert(g.clone());
        }
        let mut refs = Vec::new();
        let mut nested = Vec::new();
        collect_refs(f.body, &mut refs, &mut nested);
        for r in refs {
            let local = locals.contains(&r) || f.enclosing.iter().any(|s| s.contains(&r));
            if !local {
                self.pending_free.push(r);
            }
        }
        let mut chain = f.enclosing.clone();
        chain.push(locals);
        for (params, body) in nested {
            self.deferred.push(Deferred { params, body, enclosing: chain.clone() });
        }
    }
}

/// Names bound anywhere in a function body, without descending into nested
/// function or class bodies.
fn collect_bindings(stmts: &[Stmt], locals: &mut BTreeSet<String>, globals: &mut BTreeSet<String>, nonlocals: &mut BTreeSet<String>) {
    for stmt in stmts {
        if stmt.compound {
            let (e, child) = compound_effect(stmt);
            locals.extend(e.defs);
            match child {
                Child::Inline(body) => collect_bindings(body, locals, globals, nonlocals),
                Child::Function { name, .. } | Child::Class { name, .. } => {
                    locals.insert(name);
                }
            }
        } else {
            let e = simple_effect(&stmt.tokens);
            locals.extend(e.defs);
            globals.extend(e.globals);
            nonlocals.extend(e.nonlocals);
        }
    }
}

/// Every name read inside a function body; nested functions are returned
/// for separate analysis.
fn collect_refs<'a>(stmts: &'a [Stmt], refs: &mut Vec<String>, nested: &mut Vec<(Vec<String>, &'a [Stmt])>) {
    for stmt in stmts {
        if stmt.compound {
            let (e, child) = compound_effect(stmt);
            refs.extend(e.refs);
            match child {
                Child::Inline(body) => collect_refs(body, refs, nested),
                Child::Function { params, body, .. } => nested.push((params, body)),
                Child::Class { body, .. } => {
                    // Class bodies inside functions read from the function scope.
                    let mut class_locals = BTreeSet::new();
                    collect_bindings(body, &mut class_locals, &mut BTreeSet::new(), &mut BTreeSet::new());
                    let mut inner = Vec::new();
                    collect_refs(body, &mut inner, nested);
                    refs.extend(inner.into_iter().filter(|r| !class_locals.contains(r)));
                }
            }
        } else {
            refs.extend(simple_effect(&stmt.tokens).refs);
        }
    }
}

/// Checks syntax only.
pub fn check(source: &str) -> Result<(), SyntaxError> {
    let lines = tokenize(source)?;
    build_blocks(&lines).map(|_| ())
}

pub fn analyze(source: &str) -> Result<Variables, SyntaxError> {
    let lines = tokenize(source)?;
    let stmts = build_blocks(&lines)?;
    let mut w = Walker::default();
    w.walk_ordered(&stmts, None);
    while let Some(f) = w.deferred.pop() {
        w.walk_function(f);
    }
    // Function bodies run after the whole cell executed; a global defined
    // anywhere in the cell satisfies them.
    for r in std::mem::take(&mut w.pending_free) {
        if !w.defined.contains(&r) {
            w.referenced.insert(r);
        }
    }
    Ok(Variables { defined: w.defined, referenced: w.referenced })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(src: &str) -> (Vec<String>, Vec<String>) {
        let v = analyze(src).unwrap_or_else(|e| panic!("{src:?}: {e}"));
        (v.defined.into_iter().collect(), v.referenced.into_iter().collect())
    }

    #[test]
    fn assignments_defs_imports() {
        let (d, r) = vars("import pandas as pd\nfrom os import path, sep as s\nimport a.b.c\nx, (y, *z) = 1, 2, 3\nclass K(Base):\n    attr = 1\n");
        assert_eq!(d, ["K", "a", "path", "pd", "s", "x", "y", "z"]);
        assert_eq!(r, ["Base"]);
    }

    #[test]
    fn order_inside_cell() {
        // Read before the cell assigns it: a dependency on an earlier cell.
        let (d, r) = vars("x = x + 1");
        assert_eq!(d, ["x"]);
        assert_eq!(r, ["x"]);
        let (_, r) = vars("y = 1\nz = y * 2");
        assert!(r.is_empty());
        let (d, r) = vars("total += 1");
        assert_eq!(d, ["total"]);
        assert_eq!(r, ["total"]);
    }

    #[test]
    fn function_scopes() {
        let src = "def f(a, b=default_b, *args, c: Ann = 3, **kw) -> Ret:\n    local = a + helper\n    return local + later\nlater = 5\n";
        let (d, r) = vars(src);
        assert_eq!(d, ["f", "later"]);
        assert_eq!(r, ["Ann", "Ret", "default_b", "helper"]);
        let src = "def outer():\n    n = 1\n    def inner():\n        return n + m\n    return inner\n";
        let (d, r) = vars(src);
        assert_eq!(d, ["outer"]);
        assert_eq!(r, ["m"]);
    }

    #[test]
    fn global_statement_defines_module_name() {
        let (d, r) = vars("def init():\n    global cfg\n    cfg = load()\n");
        assert_eq!(d, ["cfg", "init"]);
        assert_eq!(r, ["load"]);
    }

    #[test]
    fn attributes_subscripts_kwargs() {
        let (d, r) = vars("df['col'] = df.other.apply(fn, axis=1)\nobj.attr = key");
        assert!(d.is_empty());
        assert_eq!(r, ["df", "fn", "key", "obj"]);
    }

    #[test]
    fn comprehensions_and_lambdas() {
        let (d, r) = vars("out = [row.x * k for row in rows if row.ok]\nsq = lambda v, w=base: v * w\n");
        assert_eq!(d, ["out", "sq"]);
        assert_eq!(r, ["base", "k", "rows"]);
        let (d, r) = vars("pairs = {a: b for (a, b) in items}\nif (n := len(pairs)) > 3: print(n)");
        assert_eq!(d, ["n", "pairs"]);
        assert_eq!(r, ["items", "len", "print"]);
    }

    #[test]
    fn control_flow_targets() {
        let (d, r) = vars("for i, v in enumerate(data):\n    acc = v\nwith open(p) as fh:\n    text = fh.read()\ntry:\n    pass\nexcept ValueError as exc:\n    pass\n");
        assert_eq!(d, ["acc", "exc", "fh", "i", "text", "v"]);
        assert_eq!(r, ["ValueError", "data", "enumerate", "open", "p"]);
    }

    #[test]
    fn class_body_scope() {
        let (d, r) = vars("class A:\n    size = 3\n    doubled = size * 2\n    def m(self):\n        return size\n");
        assert_eq!(d, ["A"]);
        // Methods do not see class attributes.
        assert_eq!(r, ["size"]);
    }

    #[test]
    fn strings_and_continuations() {
        let src = "s = \"\"\"multi\nline {x}\"\"\"\nt = f'{y}' \\\n    + r'\\d'\nu = (1 +\n     2)\n";
        let (d, r) = vars(src);
        assert_eq!(d, ["s", "t", "u"]);
        assert!(r.is_empty());
    }

    #[test]
    fn numbers() {
        let (d, _) = vars("a = 1e-5 + 0x1F + 1_000 + .5 + 3j");
        assert_eq!(d, ["a"]);
    }

    #[test]
    fn syntax_errors() {
        for bad in [
            "def f(:\n    pass",
            "x = (1, 2",
            "print 'hi'",
            "if x\n    y = 1",
            "def f():\nreturn 1",
            "  x = 1",
            "x = 1 +",
            "1 = x",
            "f() = 3",
            "s = 'open",
            "x = 1\n    y = 2",
            "for x:\n    pass",
            "if a:\n        b = 1\n    c = 2",
            "x = $",
            "a = ]",
        ] {
            assert!(check(bad).is_err(), "accepted {bad:?}");
        }
        for good in ["", "# only a comment\n", "x = [\n  1,\n  2,\n]\n", "a = b = c", "def f(x, /, y, *, z): ...", "match cmd:\n    case Point(x=0):\n        pass\n"] {
            assert!(check(good).is_ok(), "rejected {good:?}: {:?}", check(good));
        }
    }
}
