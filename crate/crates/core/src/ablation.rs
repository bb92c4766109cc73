//! Prompt decomposition and single-element ablation.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::lexicon::Lexicon;
use crate::mathtok::{self, ChunkClass};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AblationError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("ablating {surface:?} ({perturbation}) is degenerate: {reason}")]
    DegenerateAblation {
        surface: String,
        perturbation: Perturbation,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    MathExpression,
    InstructionKeyword,
    NumericReference,
    LinguisticFeature,
}

impl ElementKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::MathExpression => "math_expression",
            ElementKind::InstructionKeyword => "instruction_keyword",
            ElementKind::NumericReference => "numeric_reference",
            ElementKind::LinguisticFeature => "linguistic_feature",
        }
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    Mask,
    SwapOrder,
    CaseChange,
    StripPunctuation,
}

impl Perturbation {
    pub fn as_str(self) -> &'static str {
        match self {
            Perturbation::Mask => "mask",
            Perturbation::SwapOrder => "swap_order",
            Perturbation::CaseChange => "case_change",
            Perturbation::StripPunctuation => "strip_punctuation",
        }
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One ablatable part of a prompt. `char_span` holds UTF-8 byte offsets;
/// linguistic features span the whole prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptElement {
    pub kind: ElementKind,
    pub surface: String,
    pub char_span: (usize, usize),
    pub perturbation: Perturbation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblatedPrompt {
    pub element: PromptElement,
    pub text: String,
    /// SHA-256 of the original prompt.
    pub provenance: String,
}

/// An element whose ablation was skipped, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedAblation {
    pub element: PromptElement,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AblationSet {
    pub ablations: Vec<AblatedPrompt>,
    pub skipped: Vec<SkippedAblation>,
}

/// JSON manifest of an ablation run over one prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationManifest {
    pub prompt_hash: String,
    pub prompt: String,
    pub trials: Vec<ManifestTrial>,
    pub skipped: Vec<SkippedAblation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestTrial {
    pub kind: ElementKind,
    pub surface: String,
    pub perturbation: Perturbation,
    pub char_span: (usize, usize),
    pub text: String,
}

impl AblationManifest {
    pub fn new(prompt: &str, set: &AblationSet) -> Self {
        Self {
            prompt_hash: sha256_hex(prompt.as_bytes()),
            prompt: prompt.to_string(),
            trials: set
                .ablations
                .iter()
                .map(|a| ManifestTrial {
                    kind: a.element.kind,
                    surface: a.element.surface.clone(),
                    perturbation: a.element.perturbation,
                    char_span: a.element.char_span,
                    text: a.text.clone(),
                })
                .collect(),
            skipped: set.skipped.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

fn joins_operands(op: &str) -> bool {
    !matches!(op, "->" | "→" | "=>")
}

fn is_operand(class: ChunkClass) -> bool {
    matches!(class, ChunkClass::Expression | ChunkClass::Variable | ChunkClass::Number)
}

/// Math expressions and numeric references found by the math-token
/// grammar, as non-overlapping elements in text order.
fn math_elements(prompt: &str) -> Vec<PromptElement> {
    let chunks = mathtok::chunks(prompt);
    let classes: Vec<ChunkClass> = chunks.iter().map(|c| mathtok::classify(c.text)).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chunks.len() {
        match classes[i] {
            ChunkClass::Tuple => {
                out.push(PromptElement {
                    kind: ElementKind::NumericReference,
                    surface: chunks[i].text.to_string(),
                    char_span: (chunks[i].start, chunks[i].end),
                    perturbation: Perturbation::Mask,
                });
                i += 1;
            }
            class if is_operand(class) => {
                // operand (operator operand)*
                let mut j = i;
                while j + 2 < chunks.len()
                    && classes[j + 1] == ChunkClass::Operator
                    && joins_operands(chunks[j + 1].text)
                    && is_operand(classes[j + 2])
                {
                    j += 2;
                }
                let span = (chunks[i].start, chunks[j].end);
                let kind = if j > i {
                    Some(ElementKind::MathExpression)
                } else {
                    match class {
                        ChunkClass::Number => Some(ElementKind::NumericReference),
                        ChunkClass::Expression => Some(ElementKind::MathExpression),
                        _ => None,
                    }
                };
                if let Some(kind) = kind {
                    out.push(PromptElement {
                        kind,
                        surface: prompt[span.0..span.1].to_string(),
                        char_span: span,
                        perturbation: Perturbation::Mask,
                    });
                }
                i = j + 1;
            }
            _ => i += 1,
        }
    }
    out
}

fn whole(prompt: &str, surface: &str, perturbation: Perturbation) -> PromptElement {
    PromptElement {
        kind: ElementKind::LinguisticFeature,
        surface: surface.to_string(),
        char_span: (0, prompt.len()),
        perturbation,
    }
}

/// Breaks a question prompt into ablatable elements: math expressions,
/// instruction keywords, numeric references, and synthesized linguistic
/// features (word order, casing, punctuation).
pub fn decompose_prompt(prompt: &str, instructions: &Lexicon) -> Result<Vec<PromptElement>, AblationError> {
    if prompt.trim().is_empty() {
        return Err(AblationError::EmptyPrompt);
    }
    let mut masks = math_elements(prompt);
    let mut has_instruction = false;
    for hit in instructions.find_all(prompt) {
        let overlaps = masks.iter().any(|e| hit.start < e.char_span.1 && e.char_span.0 < hit.end);
        if !overlaps {
            has_instruction = true;
            masks.push(PromptElement {
                kind: ElementKind::InstructionKeyword,
                surface: hit.surface,
                char_span: (hit.start, hit.end),
                perturbation: Perturbation::Mask,
            });
        }
    }
    masks.sort_by_key(|e| e.char_span);

    if has_instruction {
        masks.push(whole(prompt, "word order", Perturbation::SwapOrder));
    }
    masks.push(whole(prompt, "casing", Perturbation::CaseChange));
    masks.push(whole(prompt, "punctuation", Perturbation::StripPunctuation));
    Ok(masks)
}

static SPACE_RUN_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[ \t\u{a0}]+").unwrap());
static SPACE_BEFORE_PUNCT_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r" +([,.;:?!])").unwrap());
static REPEATED_COMMA_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r",(?:\s*,)+").unwrap());

/// Collapses blank runs within lines, drops empty lines, removes space before
/// punctuation and trims stray commas/semicolons at line edges.
pub fn normalize_whitespace(text: &str) -> String {
    let lines: Vec<String> = text
        .lines()
        .map(|line| {
            let line = SPACE_RUN_RE.replace_all(line, " ");
            let line = SPACE_BEFORE_PUNCT_RE.replace_all(&line, "$1");
            let line = REPEATED_COMMA_RE.replace_all(&line, ",");
            line.trim().trim_matches([',', ';']).trim().to_string()
        })
        .filter(|l| !l.is_empty())
        .collect();
    lines.join("\n")
}

/// Connectives left dangling when the phrase after them is removed,
/// longest first.
const CONNECTIVES: &[&str] = &[
    "at the point", "at point", "at the", "of the", "at", "of", "in", "for", "with", "on", "to", "from", "as", "where",
    "when", "and",
];

fn trailing_connective(left: &str) -> Option<usize> {
    let trimmed = left.trim_end();
    let lower = trimmed.to_lowercase();
    for phrase in CONNECTIVES {
        if lower.ends_with(phrase) {
            let cut = trimmed.len() - phrase.len();
            let boundary_ok = trimmed[..cut].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
            if boundary_ok && trimmed.is_char_boundary(cut) {
                return Some(cut);
            }
        }
    }
    None
}

fn starts_with_connective(right: &str) -> bool {
    let lower = right.to_lowercase();
    CONNECTIVES.iter().any(|p| {
        lower.starts_with(p) && lower[p.len()..].chars().next().is_none_or(|c| !c.is_alphanumeric())
    })
}

/// Removes `span` from `prompt`, eliding connectives orphaned by the removal.
fn mask_span(prompt: &str, span: (usize, usize)) -> String {
    let mut left = &prompt[..span.0];
    let right = &prompt[span.1..];
    loop {
        let rest = right.trim_start_matches([' ', '\t']);
        let dangling = rest.is_empty()
            || rest.starts_with(['\n', ',', '.', ';', ':', '?', '!', ')'])
            || starts_with_connective(rest);
        if !dangling {
            break;
        }
        match trailing_connective(left) {
            Some(cut) => left = &left[..cut],
            None => break,
        }
    }
    normalize_whitespace(&format!("{left} {right}"))
}

fn strip_punctuation(prompt: &str) -> String {
    let chars: Vec<char> = prompt.chars().collect();
    let mut out = String::with_capacity(prompt.len());
    for (i, &c) in chars.iter().enumerate() {
        let decimal_point = c == '.'
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && chars.get(i + 1).is_some_and(char::is_ascii_digit);
        if (c == ',' || c == '.') && !decimal_point {
            continue;
        }
        out.push(c);
    }
    normalize_whitespace(&out)
}

/// Moves the text after the main instructional verb in front of it:
/// `A V B` becomes `B V A`.
fn swap_around(prompt: &str, verb: (usize, usize)) -> String {
    let before = &prompt[..verb.0];
    let v = &prompt[verb.0..verb.1];
    let after = &prompt[verb.1..];
    normalize_whitespace(&format!("{after} {v} {before}"))
}

/// Applies one element's perturbation to `prompt`.
pub fn ablate(prompt: &str, element: &PromptElement, main_verb: Option<(usize, usize)>) -> Result<String, AblationError> {
    let degenerate = |reason: &str| AblationError::DegenerateAblation {
        surface: element.surface.clone(),
        perturbation: element.perturbation,
        reason: reason.to_string(),
    };
    let text = match element.perturbation {
        Perturbation::Mask => mask_span(prompt, element.char_span),
        Perturbation::CaseChange => normalize_whitespace(&prompt.to_lowercase()),
        Perturbation::StripPunctuation => strip_punctuation(prompt),
        Perturbation::SwapOrder => match main_verb {
            Some(verb) => swap_around(prompt, verb),
            None => return Err(degenerate("no instructional verb to swap around")),
        },
    };
    if !text.chars().any(char::is_alphanumeric) {
        return Err(degenerate("ablation leaves an empty prompt"));
    }
    if text == normalize_whitespace(prompt) {
        return Err(degenerate("ablation leaves the prompt unchanged"));
    }
    Ok(text)
}

/// One ablated prompt per element; degenerate variants are recorded in
/// `skipped` instead.
pub fn generate_ablations(prompt: &str, elements: &[PromptElement]) -> AblationSet {
    let provenance = sha256_hex(prompt.as_bytes());
    let main_verb = elements
        .iter()
        .find(|e| e.kind == ElementKind::InstructionKeyword)
        .map(|e| e.char_span);
    let mut set = AblationSet::default();
    for element in elements {
        match ablate(prompt, element, main_verb) {
            Ok(text) => set.ablations.push(AblatedPrompt {
                element: element.clone(),
                text,
                provenance: provenance.clone(),
            }),
            Err(err) => {
                log::warn!("skipping ablation: {err}");
                set.skipped.push(SkippedAblation {
                    element: element.clone(),
                    reason: err.to_string(),
                });
            }
        }
    }
    set
}
