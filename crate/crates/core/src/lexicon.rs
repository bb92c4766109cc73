//! Plain-text tag lexicons.
//!
//! One entry per line in the form `tag: lexeme1, lexeme2, ...`. Blank lines
//! and lines starting with `#` are ignored. Repeated tags merge their lexemes.
//! Matching is case-insensitive and whole-word wherever a lexeme starts or
//! ends with a word character; symbol lexemes such as `∇` match anywhere.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{LazyLock, Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_OPERATIONS: &str = include_str!("../lexicons/operations.txt");
pub const DEFAULT_CONCEPTS: &str = include_str!("../lexicons/concepts.txt");
pub const DEFAULT_INSTRUCTIONS: &str = include_str!("../lexicons/instructions.txt");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("line {line}: expected `tag: lexeme, ...`, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: tag {tag:?} has no lexemes")]
    NoLexemes { line: usize, tag: String },
    #[error("lexicon is empty")]
    Empty,
    #[error("reading lexicon {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub tag: String,
    pub lexemes: Vec<String>,
}

/// A single lexeme hit inside a text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconMatch {
    pub tag: String,
    /// The text exactly as it appears in the input.
    pub surface: String,
    /// Byte range of the hit.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
    #[serde(skip)]
    compiled: OnceLock<Vec<CompiledLexeme>>,
}

impl PartialEq for Lexicon {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl Eq for Lexicon {}

#[derive(Debug, Clone)]
struct CompiledLexeme {
    entry: usize,
    pattern: LexemePattern,
}

/// A compiled lexeme with its word-boundary requirements.
#[derive(Debug, Clone)]
pub(crate) struct LexemePattern {
    re: Regex,
    needs_left: bool,
    needs_right: bool,
}

impl LexemePattern {
    pub(crate) fn new(lexeme: &str) -> Option<Self> {
        let words: Vec<&str> = lexeme.split_whitespace().collect();
        if words.is_empty() {
            return None;
        }
        let pattern = words.iter().map(|w| regex::escape(w)).collect::<Vec<_>>().join(r"\s+");
        // compiled regexes share their program, so clones out of the cache are cheap
        static CACHE: LazyLock<Mutex<HashMap<String, Regex>>> = LazyLock::new(Default::default);
        let mut cache = CACHE.lock().unwrap_or_else(|e| e.into_inner());
        let re = cache
            .entry(pattern)
            .or_insert_with_key(|p| {
                regex::RegexBuilder::new(p)
                    .case_insensitive(true)
                    .build()
                    .expect("escaped lexeme pattern")
            })
            .clone();
        Some(Self {
            re,
            needs_left: lexeme.chars().next().is_some_and(is_word_char),
            needs_right: lexeme.chars().next_back().is_some_and(is_word_char),
        })
    }

    /// Byte ranges of all boundary-respecting occurrences in `text`.
    pub(crate) fn find_in(&self, text: &str) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut from = 0;
        while from <= text.len() {
            let Some(m) = self.re.find_at(text, from) else { break };
            let left_ok = !self.needs_left || !text[..m.start()].chars().next_back().is_some_and(is_word_char);
            let right_ok = !self.needs_right || !text[m.end()..].chars().next().is_some_and(is_word_char);
            if left_ok && right_ok {
                out.push((m.start(), m.end()));
                from = m.end();
            } else {
                // retry one char later so overlapping candidates are not skipped
                from = m.start() + text[m.start()..].chars().next().map_or(1, char::len_utf8);
            }
        }
        out
    }
}

impl Lexicon {
    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut lexicon = Lexicon::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (tag, rest) = line.split_once(':').ok_or_else(|| LexiconError::Malformed {
                line: i + 1,
                text: line.to_string(),
            })?;
            let tag = tag.trim();
            if tag.is_empty() {
                return Err(LexiconError::Malformed {
                    line: i + 1,
                    text: line.to_string(),
                });
            }
            let lexemes: Vec<String> = rest
                .split(',')
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty())
                .collect();
            if lexemes.is_empty() {
                return Err(LexiconError::NoLexemes {
                    line: i + 1,
                    tag: tag.to_string(),
                });
            }
            lexicon.insert(tag, lexemes);
        }
        if lexicon.entries.is_empty() {
            return Err(LexiconError::Empty);
        }
        Ok(lexicon)
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn default_operations() -> Self {
        Self::parse(DEFAULT_OPERATIONS).expect("bundled operation lexicon")
    }

    pub fn default_concepts() -> Self {
        Self::parse(DEFAULT_CONCEPTS).expect("bundled concept lexicon")
    }

    pub fn default_instructions() -> Self {
        Self::parse(DEFAULT_INSTRUCTIONS).expect("bundled instruction lexicon")
    }

    /// Adds lexemes to `tag`, creating the entry if needed.
    pub fn insert(&mut self, tag: &str, lexemes: impl IntoIterator<Item = String>) {
        self.compiled = OnceLock::new();
        let idx = match self.entries.iter().position(|e| e.tag == tag) {
            Some(idx) => idx,
            None => {
                self.entries.push(LexiconEntry {
                    tag: tag.to_string(),
                    lexemes: Vec::new(),
                });
                self.entries.len() - 1
            }
        };
        let entry = &mut self.entries[idx];
        for lexeme in lexemes {
            if !entry.lexemes.iter().any(|l| l.eq_ignore_ascii_case(&lexeme)) {
                entry.lexemes.push(lexeme);
            }
        }
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains_tag(&self, tag: &str) -> bool {
        self.entries.iter().any(|e| e.tag == tag)
    }

    /// Every lexeme hit in `text`, overlaps included, ordered by start
    /// offset and then by descending length.
    pub fn all_hits(&self, text: &str) -> Vec<LexiconMatch> {
        let compiled = self.compiled.get_or_init(|| {
            let mut out = Vec::new();
            for (entry, e) in self.entries.iter().enumerate() {
                for lexeme in &e.lexemes {
                    if let Some(pattern) = LexemePattern::new(lexeme) {
                        out.push(CompiledLexeme { entry, pattern });
                    }
                }
            }
            out
        });
        let mut hits: Vec<LexiconMatch> = Vec::new();
        for c in compiled {
            for (start, end) in c.pattern.find_in(text) {
                hits.push(LexiconMatch {
                    tag: self.entries[c.entry].tag.clone(),
                    surface: text[start..end].to_string(),
                    start,
                    end,
                });
            }
        }
        // earliest start, then longest span; entry order breaks remaining ties
        hits.sort_by(|a, b| a.start.cmp(&b.start).then((b.end - b.start).cmp(&(a.end - a.start))));
        hits
    }

    /// Non-overlapping lexeme hits: at a given start the longest lexeme wins.
    pub fn find_all(&self, text: &str) -> Vec<LexiconMatch> {
        let hits = self.all_hits(text);
        let mut kept: Vec<LexiconMatch> = Vec::with_capacity(hits.len());
        for hit in hits {
            if kept.last().is_none_or(|last| hit.start >= last.end) {
                kept.push(hit);
            }
        }
        kept
    }

    /// Distinct tags found in `text`, in order of first occurrence, each with
    /// the lexeme that first triggered it. Overlapping hits all count, so
    /// adding lexemes can only add tags.
    pub fn tag(&self, text: &str) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        for hit in self.all_hits(text) {
            if !out.iter().any(|(t, _)| *t == hit.tag) {
                out.push((hit.tag, hit.surface));
            }
        }
        out
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Byte ranges of case-insensitive, boundary-respecting occurrences of
/// `lexeme` in `text`. Internal whitespace matches any whitespace run.
pub(crate) fn find_lexeme(text: &str, lexeme: &str) -> Vec<(usize, usize)> {
    LexemePattern::new(lexeme).map(|p| p.find_in(text)).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entries_and_merges_repeated_tags() {
        let lex = Lexicon::parse("# ops\nsolving: solve, find\n\nsolving: compute, find\n").unwrap();
        assert_eq!(lex.entries().len(), 1);
        assert_eq!(lex.entries()[0].lexemes, vec!["solve", "find", "compute"]);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(Lexicon::parse("no colon here"), Err(LexiconError::Malformed { line: 1, .. })));
        assert!(matches!(Lexicon::parse("tag: , ,"), Err(LexiconError::NoLexemes { .. })));
        assert!(matches!(Lexicon::parse("# only comments\n"), Err(LexiconError::Empty)));
    }

    #[test]
    fn whole_word_and_case_insensitive() {
        let lex = Lexicon::parse("limit: limit").unwrap();
        assert_eq!(lex.tag("Take the LIMIT now").len(), 1);
        assert!(lex.tag("the limitation").is_empty());
        assert!(lex.tag("sublimit").is_empty());
    }

    #[test]
    fn symbols_match_without_word_boundaries() {
        let lex = Lexicon::parse("gradient: ∇, gradient").unwrap();
        let hits = lex.find_all("Compute ∇f(-1,4)");
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].surface, "∇");
    }

    #[test]
    fn multi_word_phrases_span_whitespace_runs() {
        let lex = Lexicon::parse("chain rule: chain rule").unwrap();
        let hits = lex.find_all("apply the chain\n  rule here");
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].surface, "chain\n  rule");
    }

    #[test]
    fn longest_match_wins_at_same_start() {
        let lex = Lexicon::parse("derivative: derivative\ndirectional derivative: directional derivative").unwrap();
        let hits = lex.find_all("the directional derivative");
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].tag, "directional derivative");
        // tagging keeps the shorter overlapping lexeme too
        let tags: Vec<String> = lex.tag("the directional derivative").into_iter().map(|(t, _)| t).collect();
        assert_eq!(tags, vec!["directional derivative", "derivative"]);
    }

    #[test]
    fn bundled_lexicons_parse() {
        assert!(!Lexicon::default_operations().is_empty());
        assert!(Lexicon::default_concepts().contains_tag("gradient"));
        assert!(Lexicon::default_instructions().contains_tag("find"));
    }
}
