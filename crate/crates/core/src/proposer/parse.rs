//! Lenient parser for free-form triple lists.
//!
//! Accepted line shapes, each optionally preceded by a list marker such as
//! `3.`, `3)` or `-`:
//!
//! ```text
//! (David Lean, worked for, London Films)
//! <David Lean, worked for, London Films>
//! 1. (David Lean, worked for, London Films)
//! ```
//!
//! Components are split on commas outside nested brackets and quotes.
//! Anything else is skipped and reported.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTriple {
    /// Zero-based line number within the response.
    pub line_index: usize,
    pub subject: String,
    pub relation: String,
    pub object: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NotATriple,
    WrongArity,
    EmptyComponent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedLine {
    pub line_index: usize,
    pub text: String,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub triples: Vec<RawTriple>,
    pub skipped: Vec<SkippedLine>,
}

pub fn parse_triples(response: &str) -> ParsedResponse {
    let mut out = ParsedResponse::default();
    for (line_index, line) in response.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match parse_line(trimmed) {
            Ok([subject, relation, object]) => out.triples.push(RawTriple {
                line_index,
                subject,
                relation,
                object,
            }),
            Err(reason) => out.skipped.push(SkippedLine {
                line_index,
                text: trimmed.to_string(),
                reason,
            }),
        }
    }
    out
}

fn parse_line(line: &str) -> Result<[String; 3], SkipReason> {
    let body = strip_list_marker(line);
    let body = body.trim_end_matches([',', ';', '.']).trim_end();
    let inner = match (body.chars().next(), body.chars().last()) {
        (Some('('), Some(')')) | (Some('<'), Some('>')) if body.len() >= 2 => &body[1..body.len() - 1],
        _ => return Err(SkipReason::NotATriple),
    };
    let parts = split_top_level(inner);
    if parts.len() != 3 {
        return Err(SkipReason::WrongArity);
    }
    let mut fields = parts.into_iter().map(|p| strip_quotes(p.trim()).to_string());
    let triple = [
        fields.next().unwrap_or_default(),
        fields.next().unwrap_or_default(),
        fields.next().unwrap_or_default(),
    ];
    if triple.iter().any(|f| f.is_empty()) {
        return Err(SkipReason::EmptyComponent);
    }
    Ok(triple)
}

fn strip_list_marker(line: &str) -> &str {
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return rest.trim_start();
        }
        return line;
    }
    for bullet in ["-", "*", "\u{2022}"] {
        if let Some(rest) = line.strip_prefix(bullet) {
            return rest.trim_start();
        }
    }
    line
}

fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut quote: Option<char> = None;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None => match c {
                '(' | '[' | '{' | '<' => depth += 1,
                ')' | ']' | '}' | '>' => depth -= 1,
                '"' | '\u{201c}' => quote = Some(if c == '"' { '"' } else { '\u{201d}' }),
                ',' if depth == 0 => {
                    parts.push(&s[start..i]);
                    start = i + 1;
                }
                _ => {}
            },
        }
    }
    parts.push(&s[start..]);
    parts
}

fn strip_quotes(s: &str) -> &str {
    for (open, close) in [('"', '"'), ('\'', '\''), ('\u{201c}', '\u{201d}'), ('\u{2018}', '\u{2019}')] {
        if let Some(inner) = s.strip_prefix(open).and_then(|r| r.strip_suffix(close)) {
            return inner.trim();
        }
    }
    s
}
