//! Plain-text math token grammar.
//!
//! Text is cut into whitespace-delimited chunks. A chunk with unbalanced
//! opening brackets absorbs following chunks until it balances, provided the
//! merged result still reads as math (`f(x, y)`, `(-1, 4)`). Sentence
//! punctuation is trimmed from both ends. Each chunk is then classified.

use std::sync::LazyLock;

use regex::Regex;

/// A trimmed chunk with its byte range in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkClass {
    /// A parenthesised tuple of numbers such as `(-1, 4)`.
    Tuple,
    /// A bare number such as `3`, `-2.5`.
    Number,
    /// A lone operator such as `=`, `+`, `->`.
    Operator,
    /// A single-letter identifier like `x` or `u`.
    Variable,
    /// Any other math-bearing chunk: `x^2`, `f(x)`, `∇f`, `sqrt(65)`.
    Expression,
    /// Ordinary prose.
    Word,
}

const TRAILING_PUNCT: &[char] = &['.', ',', ';', ':', '!', '?', '"', '\'', '`', '“', '”', '’'];
const LEADING_PUNCT: &[char] = &['"', '\'', '`', '“', '‘', '¿', '¡'];
const MATH_SYMBOLS: &[char] = &[
    '^', '=', '+', '*', '/', '<', '>', '∇', '∂', '∫', '√', '∑', '∏', '·', '×', '÷', '≤', '≥', '≠',
    '→', '|', '⟨', '⟩', '∞', 'π', '′',
];
const FUNCTION_NAMES: &[&str] = &[
    "sqrt", "sin", "cos", "tan", "sec", "csc", "cot", "ln", "log", "exp", "lim", "arcsin", "arccos",
    "arctan", "sinh", "cosh", "tanh",
];

static TUPLE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\(\s*[-−]?\d+(?:\.\d+)?\s*(?:,\s*[-−]?\d+(?:\.\d+)?\s*)+\)$").unwrap()
});
static NUMBER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[-−]?\d+(?:\.\d+)?$").unwrap());
static FUNC_APP_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\p{L}[\p{L}\d_']*\(").unwrap());
static OPERATOR_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:[-−=+*/^<>≤≥≠→×÷·]|->|<=|>=|!=|=>)$").unwrap());

fn bracket_balance(s: &str) -> i32 {
    s.chars().fold(0, |acc, c| match c {
        '(' | '[' | '{' => acc + 1,
        ')' | ']' | '}' => acc - 1,
        _ => acc,
    })
}

/// Trims sentence punctuation and unmatched outer brackets. Returns the
/// byte range of the trimmed slice within `s`.
fn trim_bounds(s: &str) -> (usize, usize) {
    let mut start = 0;
    let mut end = s.len();
    loop {
        let cur = &s[start..end];
        if let Some(c) = cur.chars().next_back() {
            if TRAILING_PUNCT.contains(&c) {
                // a quote right after a one-letter name is a prime: f', g''
                if c == '\'' {
                    let ident = cur.trim_end_matches('\'');
                    if ident.chars().rev().take_while(|ch| ch.is_alphanumeric()).count() == 1 {
                        break;
                    }
                }
                end -= c.len_utf8();
                continue;
            }
            if matches!(c, ')' | ']' | '}') && bracket_balance(cur) < 0 {
                end -= c.len_utf8();
                continue;
            }
        }
        if let Some(c) = cur.chars().next() {
            if LEADING_PUNCT.contains(&c) {
                start += c.len_utf8();
                continue;
            }
            if matches!(c, '(' | '[' | '{') && bracket_balance(cur) > 0 {
                start += c.len_utf8();
                continue;
            }
        }
        break;
    }
    (start, end.max(start))
}

/// True if a chunk carries mathematical content.
pub fn is_mathy(s: &str) -> bool {
    if s.is_empty() {
        return false;
    }
    if s.chars().any(|c| c.is_ascii_digit() || MATH_SYMBOLS.contains(&c)) {
        return true;
    }
    if FUNC_APP_RE.is_match(s) {
        return true;
    }
    if s.contains('_') && s.chars().any(char::is_alphabetic) {
        return true;
    }
    let lower = s.to_lowercase();
    if FUNCTION_NAMES.contains(&lower.as_str()) {
        return true;
    }
    if OPERATOR_RE.is_match(s) {
        return true;
    }
    is_variable(s)
}

/// A single letter other than the English words "a" and "I".
pub fn is_variable(s: &str) -> bool {
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => c.is_alphabetic() && !matches!(c, 'a' | 'A' | 'I'),
        _ => false,
    }
}

pub fn classify(s: &str) -> ChunkClass {
    if TUPLE_RE.is_match(s) {
        ChunkClass::Tuple
    } else if NUMBER_RE.is_match(s) {
        ChunkClass::Number
    } else if OPERATOR_RE.is_match(s) {
        ChunkClass::Operator
    } else if is_variable(s) {
        ChunkClass::Variable
    } else if is_mathy(s) {
        ChunkClass::Expression
    } else {
        ChunkClass::Word
    }
}

/// Maximum depth of nested `()`, `[]`, `{}` in `s`.
pub fn nesting_depth(s: &str) -> usize {
    let mut depth = 0usize;
    let mut max = 0usize;
    for c in s.chars() {
        match c {
            '(' | '[' | '{' => {
                depth += 1;
                max = max.max(depth);
            }
            ')' | ']' | '}' => depth = depth.saturating_sub(1),
            _ => {}
        }
    }
    max
}

/// Longest run of chunks a bracket merge may absorb.
const MAX_MERGE: usize = 12;

/// Splits `text` into trimmed chunks, merging bracketed math across spaces.
pub fn chunks(text: &str) -> Vec<Chunk<'_>> {
    let raw: Vec<(usize, usize)> = {
        let mut out = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            if c.is_whitespace() {
                if let Some(s) = start.take() {
                    out.push((s, i));
                }
            } else if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            out.push((s, text.len()));
        }
        out
    };

    let mut result = Vec::with_capacity(raw.len());
    let mut i = 0;
    while i < raw.len() {
        let (s, e) = raw[i];
        let mut consumed = 1;
        let mut span = (s, e);
        if bracket_balance(&text[s..e]) > 0 {
            let mut balance = bracket_balance(&text[s..e]);
            let mut j = i + 1;
            while j < raw.len() && j - i <= MAX_MERGE && balance > 0 {
                balance += bracket_balance(&text[raw[j].0..raw[j].1]);
                j += 1;
            }
            if balance <= 0 && j > i + 1 {
                let merged = (s, raw[j - 1].1);
                let (ts, te) = trim_bounds(&text[merged.0..merged.1]);
                if is_mathy(&text[merged.0 + ts..merged.0 + te]) {
                    span = merged;
                    consumed = j - i;
                }
            }
        }
        let (ts, te) = trim_bounds(&text[span.0..span.1]);
        if te > ts {
            result.push(Chunk {
                text: &text[span.0 + ts..span.0 + te],
                start: span.0 + ts,
                end: span.0 + te,
            });
        }
        i += consumed;
    }
    result
}

/// Number of math-bearing chunks in `text`.
pub fn math_token_count(text: &str) -> usize {
    chunks(text).iter().filter(|c| is_mathy(c.text)).count()
}
