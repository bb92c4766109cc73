//! Reasoning-flow extraction.
//!
//! A solution is segmented into steps, each step is tagged with operations,
//! concepts and a complexity level, and the steps are linked into a directed
//! acyclic graph of sequential and back-reference edges.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{Lexicon, LexiconError};
use crate::mathtok;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("solution text is empty")]
    EmptySolution,
    #[error("solution contains no reasoning steps after boilerplate removal")]
    NoSteps,
    #[error("operation lexicon tag {0:?} is not a known operation")]
    UnknownOperation(String),
    #[error("{0} lexicon is empty")]
    EmptyLexicon(&'static str),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
}

/// A contiguous piece of the solution text. `char_span` holds UTF-8 byte
/// offsets `[start, end)` into the source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawStep {
    pub index: usize,
    pub text: String,
    pub char_span: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Substitution,
    Differentiation,
    Integration,
    Simplification,
    Evaluation,
    Solving,
    Limit,
    Factoring,
    Other,
}

impl Operation {
    pub const ALL: [Operation; 9] = [
        Operation::Substitution,
        Operation::Differentiation,
        Operation::Integration,
        Operation::Simplification,
        Operation::Evaluation,
        Operation::Solving,
        Operation::Limit,
        Operation::Factoring,
        Operation::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Operation::Substitution => "substitution",
            Operation::Differentiation => "differentiation",
            Operation::Integration => "integration",
            Operation::Simplification => "simplification",
            Operation::Evaluation => "evaluation",
            Operation::Solving => "solving",
            Operation::Limit => "limit",
            Operation::Factoring => "factoring",
            Operation::Other => "other",
        }
    }

    /// Rank used to pick the dominant operation of a step; lower wins.
    pub fn dominance(self) -> u8 {
        match self {
            Operation::Differentiation => 0,
            Operation::Integration => 1,
            Operation::Limit => 2,
            Operation::Substitution => 3,
            Operation::Evaluation => 4,
            Operation::Solving => 5,
            Operation::Factoring => 6,
            Operation::Simplification => 7,
            Operation::Other => 8,
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Operation {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Operation::ALL
            .into_iter()
            .find(|op| op.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| FlowError::UnknownOperation(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationTag {
    pub name: Operation,
    pub matched_lexeme: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptTag {
    pub name: String,
    pub matched_lexeme: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Low,
    Medium,
    High,
}

impl Level {
    pub fn weight(self) -> u32 {
        match self {
            Level::Low => 1,
            Level::Medium => 3,
            Level::High => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::Medium => "medium",
            Level::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ComplexityFeatures {
    pub math_token_count: u32,
    pub max_nesting_depth: u32,
    pub operation_count: u32,
    pub concept_count: u32,
}

impl ComplexityFeatures {
    /// Linear feature score: tokens + 2·nesting + 2·operations + 2·concepts.
    pub fn score(&self) -> u32 {
        self.math_token_count + 2 * self.max_nesting_depth + 2 * self.operation_count + 2 * self.concept_count
    }
}

/// Score cut-offs: `score <= low_max` is low, `score <= medium_max` is
/// medium, anything above is high.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityThresholds {
    pub low_max: u32,
    pub medium_max: u32,
}

impl Default for ComplexityThresholds {
    fn default() -> Self {
        Self { low_max: 4, medium_max: 9 }
    }
}

impl ComplexityThresholds {
    pub fn level(&self, score: u32) -> Level {
        if score <= self.low_max {
            Level::Low
        } else if score <= self.medium_max {
            Level::Medium
        } else {
            Level::High
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityLevel {
    pub level: Level,
    pub weight: u32,
    pub features: ComplexityFeatures,
}

impl ComplexityLevel {
    pub fn from_features(features: ComplexityFeatures, thresholds: &ComplexityThresholds) -> Self {
        let level = thresholds.level(features.score());
        Self {
            level,
            weight: level.weight(),
            features,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedStep {
    pub raw: RawStep,
    pub operations: Vec<OperationTag>,
    pub concepts: Vec<ConceptTag>,
    pub complexity: ComplexityLevel,
}

impl AnnotatedStep {
    /// Highest-priority operation on this step, `Other` when untagged.
    pub fn dominant_operation(&self) -> Operation {
        self.operations
            .iter()
            .map(|t| t.name)
            .min_by_key(|op| op.dominance())
            .unwrap_or(Operation::Other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Sequential,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub total_steps: usize,
    pub total_operation_count: usize,
    pub unique_concepts: usize,
    pub avg_complexity_per_step: f64,
    pub reasoning_complexity_score: u32,
    pub pattern_trace: Vec<Operation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningFlow {
    pub steps: Vec<AnnotatedStep>,
    pub edges: Vec<Edge>,
    pub summary: FlowSummary,
}

impl ReasoningFlow {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("flow serializes");
        s.push('\n');
        s
    }

    /// Kahn's algorithm over the edge list.
    pub fn is_acyclic(&self) -> bool {
        let n = self.steps.len();
        let mut indegree = vec![0usize; n];
        for e in &self.edges {
            if e.from >= n || e.to >= n {
                return false;
            }
            indegree[e.to] += 1;
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut seen = 0;
        while let Some(node) = ready.pop() {
            seen += 1;
            for e in self.edges.iter().filter(|e| e.from == node) {
                indegree[e.to] -= 1;
                if indegree[e.to] == 0 {
                    ready.push(e.to);
                }
            }
        }
        seen == n
    }
}

// ---------------------------------------------------------------------------
// Segmentation

static ENUM_MARKER_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(?:step\s+\d{1,3}\s*[:.)]|\d{1,2}[.)]|\((?:[a-z]|[ivx]{1,4}|\d{1,2})\))(?:\s|$)").unwrap()
});
static DISCOURSE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:First|Firstly|Second|Secondly|Third|Then|Next|Finally|Lastly|Therefore|Thus|Hence|So)\b").unwrap()
});
static BLANK_LINE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\n[ \t\r]*\n").unwrap());
static HEADING_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[\p{L}\-]+(?:\s+[\p{L}\-]+){0,2}\s*:$").unwrap());
static OPENER_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(?:sure|certainly|of course|okay|ok|great|here is|here's|i hope this helps|hope this helps|let me know)\b").unwrap()
});

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rule {
    Enumeration,
    Discourse,
    Sentence,
}

/// True when `pos` begins a line, the text, or a new sentence.
fn at_clause_start(text: &str, pos: usize) -> bool {
    let before = &text[..pos];
    let trimmed = before.trim_end_matches([' ', '\t']);
    if trimmed.is_empty() || trimmed.ends_with('\n') || trimmed.ends_with('\r') {
        return true;
    }
    if trimmed.len() == before.len() {
        return false;
    }
    trimmed.ends_with(['.', '!', '?', ':', ';'])
}

fn enumeration_boundaries(text: &str) -> Vec<usize> {
    text.char_indices()
        .map(|(i, _)| i)
        .filter(|&i| {
            let c = text[i..].chars().next().unwrap();
            (c.is_ascii_alphanumeric() || c == '(')
                && ENUM_MARKER_RE.is_match(&text[i..])
                && at_clause_start(text, i)
                && (i == 0 || !text[..i].chars().next_back().is_some_and(char::is_alphanumeric))
        })
        .collect()
}

fn discourse_boundaries(text: &str) -> Vec<usize> {
    text.char_indices()
        .map(|(i, _)| i)
        .filter(|&i| {
            text[i..].starts_with(|c: char| c.is_ascii_uppercase())
                && DISCOURSE_RE.is_match(&text[i..])
                && (i == 0 || text[..i].ends_with(char::is_whitespace))
                && at_clause_start(text, i)
                && !text[..i].trim_end().ends_with([':', ';'])
        })
        .collect()
}

/// Positions just after terminal punctuation + whitespace, where the next
/// character is an uppercase letter or a digit.
fn sentence_boundaries(text: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((_, c)) = chars.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let mut saw_space = false;
        while let Some(&(_, next)) = chars.peek() {
            if next.is_whitespace() {
                saw_space = true;
                chars.next();
            } else {
                break;
            }
        }
        if let Some(&(j, next)) = chars.peek() {
            if saw_space && (next.is_uppercase() || next.is_ascii_digit() || next == '(') {
                out.push(j);
            }
        }
    }
    out
}

fn boundaries(text: &str, rule: Rule) -> Vec<usize> {
    match rule {
        Rule::Enumeration => enumeration_boundaries(text),
        Rule::Discourse => discourse_boundaries(text),
        Rule::Sentence => sentence_boundaries(text),
    }
}

fn cut(range: (usize, usize), cuts: &[usize]) -> Vec<(usize, usize)> {
    let mut pieces = Vec::new();
    let mut start = range.0;
    for &c in cuts {
        if c > start && c < range.1 {
            pieces.push((start, c));
            start = c;
        }
    }
    pieces.push((start, range.1));
    pieces
}

/// Removes a leading enumeration marker (`1.`, `(a)`, `Step 2:`).
pub fn strip_marker(text: &str) -> &str {
    match ENUM_MARKER_RE.find(text) {
        Some(m) => text[m.end()..].trim_start(),
        None => text,
    }
}

fn is_boilerplate(text: &str) -> bool {
    let body = strip_marker(text.trim());
    if !body.chars().any(char::is_alphanumeric) {
        return true;
    }
    if HEADING_RE.is_match(body) && body.split_whitespace().count() <= 3 {
        return true;
    }
    OPENER_RE.is_match(body) && mathtok::math_token_count(body) == 0
}

fn lower_rules(rule: Rule) -> &'static [Rule] {
    match rule {
        Rule::Enumeration => &[Rule::Discourse, Rule::Sentence],
        Rule::Discourse => &[Rule::Sentence],
        Rule::Sentence => &[],
    }
}

/// Splits `range` of `text` with the first applicable rule in `rules`.
/// A leading piece that does not start at a boundary of the chosen rule is
/// handed down to the remaining lower-priority rules.
fn split_with(text: &str, range: (usize, usize), rules: &[Rule], out: &mut Vec<(usize, usize)>) {
    let Some((&rule, rest)) = rules.split_first() else {
        out.push(range);
        return;
    };
    let slice = &text[range.0..range.1];
    let cuts: Vec<usize> = boundaries(slice, rule).into_iter().map(|b| b + range.0).collect();
    if cuts.is_empty() && rule != Rule::Sentence {
        split_with(text, range, rest, out);
        return;
    }
    let pieces = cut(range, &cuts);
    for (k, piece) in pieces.into_iter().enumerate() {
        let starts_at_boundary = cuts.contains(&piece.0);
        if k == 0 && !starts_at_boundary {
            split_with(text, piece, lower_rules(rule), out);
        } else {
            out.push(piece);
        }
    }
}

/// Picks the highest-priority rule that yields at least two clauses over
/// the whole solution.
fn choose_rule(text: &str) -> Rule {
    if enumeration_boundaries(text).len() >= 2 {
        Rule::Enumeration
    } else if !discourse_boundaries(text).iter().all(|&b| b == 0) {
        Rule::Discourse
    } else {
        Rule::Sentence
    }
}

/// Segments a solution into reasoning steps.
///
/// Blank lines always separate steps. Within a paragraph, explicit
/// enumerations take precedence, then discourse markers at sentence start,
/// then plain sentence boundaries. Boilerplate (pleasantries, bare headings,
/// punctuation-only fragments) is dropped.
pub fn segment_steps(solution_text: &str) -> Result<Vec<RawStep>, FlowError> {
    if solution_text.trim().is_empty() {
        return Err(FlowError::EmptySolution);
    }
    let rule = choose_rule(solution_text);
    let mut blocks = Vec::new();
    let mut start = 0;
    for m in BLANK_LINE_RE.find_iter(solution_text) {
        blocks.push((start, m.start()));
        start = m.end();
    }
    blocks.push((start, solution_text.len()));

    let rules: &[Rule] = match rule {
        Rule::Enumeration => &[Rule::Enumeration, Rule::Discourse, Rule::Sentence],
        Rule::Discourse => &[Rule::Discourse, Rule::Sentence],
        Rule::Sentence => &[Rule::Sentence],
    };
    let mut pieces = Vec::new();
    for block in blocks {
        split_with(solution_text, block, rules, &mut pieces);
    }

    let mut steps = Vec::new();
    for (s, e) in pieces {
        let slice = &solution_text[s..e];
        let lead = slice.len() - slice.trim_start().len();
        let trimmed = slice.trim();
        if trimmed.is_empty() || is_boilerplate(trimmed) {
            continue;
        }
        let start = s + lead;
        steps.push(RawStep {
            index: steps.len(),
            text: trimmed.to_string(),
            char_span: (start, start + trimmed.len()),
        });
    }
    Ok(steps)
}

// ---------------------------------------------------------------------------
// Annotation

/// Operations named in `step`, deduplicated, in order of first mention.
pub fn classify_operations(step: &RawStep, lexicon: &Lexicon) -> Result<Vec<OperationTag>, FlowError> {
    if lexicon.is_empty() {
        return Err(FlowError::EmptyLexicon("operation"));
    }
    let mut out: Vec<OperationTag> = Vec::new();
    for (tag, lexeme) in lexicon.tag(&step.text) {
        let name: Operation = tag.parse()?;
        if !out.iter().any(|t| t.name == name) {
            out.push(OperationTag {
                name,
                matched_lexeme: lexeme,
            });
        }
    }
    Ok(out)
}

/// Concepts named in `step`, deduplicated, in order of first mention.
pub fn classify_concepts(step: &RawStep, lexicon: &Lexicon) -> Result<Vec<ConceptTag>, FlowError> {
    if lexicon.is_empty() {
        return Err(FlowError::EmptyLexicon("concept"));
    }
    Ok(lexicon
        .tag(&step.text)
        .into_iter()
        .map(|(name, matched_lexeme)| ConceptTag { name, matched_lexeme })
        .collect())
}

pub fn complexity_features(text: &str, operations: usize, concepts: usize) -> ComplexityFeatures {
    let body = strip_marker(text);
    ComplexityFeatures {
        math_token_count: mathtok::math_token_count(body) as u32,
        max_nesting_depth: mathtok::nesting_depth(body) as u32,
        operation_count: operations as u32,
        concept_count: concepts as u32,
    }
}

pub fn estimate_step_complexity(
    step: &RawStep,
    operations: &[OperationTag],
    concepts: &[ConceptTag],
    thresholds: &ComplexityThresholds,
) -> ComplexityLevel {
    let features = complexity_features(&step.text, operations.len(), concepts.len());
    ComplexityLevel::from_features(features, thresholds)
}

// ---------------------------------------------------------------------------
// Graph

static STEP_REF_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:from|using|use|in|by|of|see|per|with|as in)\s+steps?\s+(\d{1,3})\b").unwrap()
});
static ABOVE_REF_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\bthe\s+(\p{L}+)\s+(?:above|found earlier|computed earlier|from before|from earlier)\b").unwrap()
});
static DEFINITION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:^|[^\p{L}\p{N}_(∇∂'])(\p{L})\s*=[^=]").unwrap());

/// Letters never treated as named intermediates: independent variables,
/// function names, the articles "a"/"I", Euler's e and the unit vector i.
const NON_INTERMEDIATES: &[char] = &['a', 'i', 'I', 'x', 'y', 'z', 't', 'f', 'g', 'h', 'e'];

fn mentions_word(text: &str, word: &str) -> bool {
    !crate::lexicon::find_lexeme(text, word).is_empty()
}

fn uses_variable(text: &str, var: char) -> bool {
    let mut prev: Option<char> = None;
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == var {
            let left_ok = prev.is_none_or(|p| !(p.is_alphanumeric() || p == '_'));
            let right_ok = chars.peek().is_none_or(|n| !(n.is_alphabetic() || *n == '_'));
            if left_ok && right_ok {
                return true;
            }
        }
        prev = Some(c);
    }
    false
}

/// Earliest step index that defines each single-letter intermediate.
fn intermediate_definitions(steps: &[AnnotatedStep]) -> Vec<(char, usize)> {
    let mut defs: Vec<(char, usize)> = Vec::new();
    for step in steps {
        let body = strip_marker(&step.raw.text);
        for cap in DEFINITION_RE.captures_iter(body) {
            let var = cap[1].chars().next().unwrap();
            if NON_INTERMEDIATES.contains(&var) || defs.iter().any(|(v, _)| *v == var) {
                continue;
            }
            defs.push((var, step.raw.index));
        }
    }
    defs
}

/// Back-references from step `idx` to earlier steps. Only explicit phrases
/// and shared single-letter intermediates count.
fn references(steps: &[AnnotatedStep], idx: usize, defs: &[(char, usize)]) -> BTreeSet<usize> {
    let text = &steps[idx].raw.text;
    let body = strip_marker(text);
    let mut targets = BTreeSet::new();

    for cap in STEP_REF_RE.captures_iter(body) {
        if let Ok(k) = cap[1].parse::<usize>() {
            if k >= 1 && k - 1 < idx {
                targets.insert(k - 1);
            }
        }
    }
    for cap in ABOVE_REF_RE.captures_iter(body) {
        let noun = &cap[1];
        if let Some(prior) = steps[..idx].iter().position(|s| mentions_word(&s.raw.text, noun)) {
            targets.insert(prior);
        }
    }
    for &(var, def_idx) in defs {
        if def_idx < idx && uses_variable(body, var) {
            targets.insert(def_idx);
        }
    }
    targets
}

pub fn summarize(steps: &[AnnotatedStep]) -> FlowSummary {
    let total_steps = steps.len();
    let total_operation_count = steps.iter().map(|s| s.operations.len()).sum();
    let unique_concepts = steps
        .iter()
        .flat_map(|s| s.concepts.iter().map(|c| c.name.as_str()))
        .collect::<HashSet<_>>()
        .len();
    let reasoning_complexity_score: u32 = steps.iter().map(|s| s.complexity.weight).sum();
    let avg_complexity_per_step = if total_steps == 0 {
        0.0
    } else {
        f64::from(reasoning_complexity_score) / total_steps as f64
    };
    FlowSummary {
        total_steps,
        total_operation_count,
        unique_concepts,
        avg_complexity_per_step,
        reasoning_complexity_score,
        pattern_trace: steps.iter().map(AnnotatedStep::dominant_operation).collect(),
    }
}

/// Links annotated steps into a reasoning graph and computes its summary.
pub fn build_reasoning_graph(steps: Vec<AnnotatedStep>) -> ReasoningFlow {
    let mut edges: BTreeSet<Edge> = BTreeSet::new();
    for i in 1..steps.len() {
        edges.insert(Edge {
            from: i - 1,
            to: i,
            kind: EdgeKind::Sequential,
        });
    }
    let defs = intermediate_definitions(&steps);
    for i in 1..steps.len() {
        for from in references(&steps, i, &defs) {
            // an adjacent reference is already covered by the sequential edge
            if from + 1 < i {
                edges.insert(Edge {
                    from,
                    to: i,
                    kind: EdgeKind::Reference,
                });
            }
        }
    }
    let summary = summarize(&steps);
    let mut edges: Vec<Edge> = edges.into_iter().collect();
    edges.sort_by_key(|e| (e.to, e.from, e.kind));
    ReasoningFlow { steps, edges, summary }
}

/// Lexicons and thresholds bundled for end-to-end extraction.
#[derive(Debug, Clone)]
pub struct FlowExtractor {
    operations: Lexicon,
    concepts: Lexicon,
    thresholds: ComplexityThresholds,
}

impl Default for FlowExtractor {
    fn default() -> Self {
        Self {
            operations: Lexicon::default_operations(),
            concepts: Lexicon::default_concepts(),
            thresholds: ComplexityThresholds::default(),
        }
    }
}

impl FlowExtractor {
    pub fn new(operations: Lexicon, concepts: Lexicon, thresholds: ComplexityThresholds) -> Result<Self, FlowError> {
        if operations.is_empty() {
            return Err(FlowError::EmptyLexicon("operation"));
        }
        if concepts.is_empty() {
            return Err(FlowError::EmptyLexicon("concept"));
        }
        for entry in operations.entries() {
            entry.tag.parse::<Operation>()?;
        }
        Ok(Self {
            operations,
            concepts,
            thresholds,
        })
    }

    pub fn operations(&self) -> &Lexicon {
        &self.operations
    }

    pub fn concepts(&self) -> &Lexicon {
        &self.concepts
    }

    pub fn thresholds(&self) -> &ComplexityThresholds {
        &self.thresholds
    }

    pub fn annotate(&self, raw: RawStep) -> Result<AnnotatedStep, FlowError> {
        let operations = classify_operations(&raw, &self.operations)?;
        let concepts = classify_concepts(&raw, &self.concepts)?;
        let complexity = estimate_step_complexity(&raw, &operations, &concepts, &self.thresholds);
        Ok(AnnotatedStep {
            raw,
            operations,
            concepts,
            complexity,
        })
    }

    pub fn extract(&self, solution_text: &str) -> Result<ReasoningFlow, FlowError> {
        let raw = segment_steps(solution_text)?;
        if raw.is_empty() {
            return Err(FlowError::NoSteps);
        }
        let steps = raw.into_iter().map(|r| self.annotate(r)).collect::<Result<Vec<_>, _>>()?;
        Ok(build_reasoning_graph(steps))
    }
}
