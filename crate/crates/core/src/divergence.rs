//! Response divergence: TF-IDF cosine similarity and token-level normalized
//! edit distance, combined into one score per ablation trial.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mathtok::{self, ChunkClass};

#[derive(Debug, Error, PartialEq)]
pub enum DivergenceError {
    #[error("TF-IDF needs at least two documents, got {0}")]
    InsufficientCorpus(usize),
    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("response is not part of the scoring corpus")]
    NotInCorpus,
}

/// Lowercase tokens. Math chunks (`x^2`, `f(x,y)`, `3.14`, `(-1,4)`) are
/// single tokens with inner whitespace removed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn join(&self) -> String {
        self.tokens.join(" ")
    }
}

pub fn tokenize(text: &str) -> TokenSequence {
    let mut tokens = Vec::new();
    for chunk in mathtok::chunks(text) {
        if mathtok::classify(chunk.text) == ChunkClass::Word {
            tokens.extend(
                chunk
                    .text
                    .split(|c: char| !c.is_alphanumeric())
                    .filter(|w| !w.is_empty())
                    .map(str::to_lowercase),
            );
        } else {
            let token: String = chunk.text.chars().filter(|c| !c.is_whitespace()).collect();
            tokens.push(token.to_lowercase());
        }
    }
    TokenSequence { tokens }
}

/// Sparse term weights; zero weights are never stored.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVector {
    pub entries: BTreeMap<String, f64>,
}

impl SparseVector {
    pub fn norm(&self) -> f64 {
        self.entries.values().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (small, large) = if self.entries.len() <= other.entries.len() {
            (self, other)
        } else {
            (other, self)
        };
        small
            .entries
            .iter()
            .filter_map(|(term, w)| large.entries.get(term).map(|v| w * v))
            .sum()
    }
}

/// Document frequencies fitted on one per-question corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfModel {
    n_docs: usize,
    df: BTreeMap<String, usize>,
}

impl TfIdfModel {
    pub fn fit(docs: &[TokenSequence]) -> Result<Self, DivergenceError> {
        if docs.len() < 2 {
            return Err(DivergenceError::InsufficientCorpus(docs.len()));
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in docs {
            let mut seen: Vec<&str> = doc.tokens.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for term in seen {
                *df.entry(term.to_string()).or_default() += 1;
            }
        }
        Ok(Self { n_docs: docs.len(), df })
    }

    /// `ln(N / df) + 1`; unseen terms are treated as df = 1.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(1).max(1);
        (self.n_docs as f64 / df as f64).ln() + 1.0
    }

    /// `tf · idf` with `tf = count / doc length`.
    pub fn transform(&self, doc: &TokenSequence) -> SparseVector {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &doc.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        let len = doc.tokens.len() as f64;
        let entries = counts
            .into_iter()
            .map(|(term, count)| (term.to_string(), (count as f64 / len) * self.idf(term)))
            .filter(|(_, w)| *w > 0.0)
            .collect();
        SparseVector { entries }
    }
}

pub fn tfidf_vectors(docs: &[TokenSequence]) -> Result<Vec<SparseVector>, DivergenceError> {
    let model = TfIdfModel::fit(docs)?;
    Ok(docs.iter().map(|d| model.transform(d)).collect())
}

/// Cosine similarity together with a flag set when either vector has zero
/// norm (the similarity is then reported as 0).
pub fn cosine_similarity_flagged(a: &SparseVector, b: &SparseVector) -> (f64, bool) {
    let na: f64 = a.entries.values().map(|w| w * w).sum();
    let nb: f64 = b.entries.values().map(|w| w * w).sum();
    if na == 0.0 || nb == 0.0 {
        return (0.0, true);
    }
    let cos = a.dot(b) / (na * nb).sqrt();
    (cos.clamp(0.0, 1.0), false)
}

pub fn cosine_similarity(a: &SparseVector, b: &SparseVector) -> f64 {
    cosine_similarity_flagged(a, b).0
}

/// Token-level Levenshtein distance with unit costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein distance over tokens divided by the longer length; 0 when
/// both sequences are empty.
pub fn normalized_edit_distance(a: &TokenSequence, b: &TokenSequence) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    levenshtein(&a.tokens, &b.tokens) as f64 / longest as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceScore {
    pub cosine_similarity: f64,
    pub normalized_edit_distance: f64,
    pub divergence: f64,
    pub alpha: f64,
    /// Set when a response had no weighted terms.
    #[serde(default)]
    pub zero_norm: bool,
}

impl DivergenceScore {
    /// `alpha · (1 − cosine) + (1 − alpha) · ned`.
    pub fn combine(cosine_similarity: f64, normalized_edit_distance: f64, alpha: f64) -> Result<Self, DivergenceError> {
        check_alpha(alpha)?;
        Ok(Self {
            cosine_similarity,
            normalized_edit_distance,
            divergence: alpha * (1.0 - cosine_similarity) + (1.0 - alpha) * normalized_edit_distance,
            alpha,
            zero_norm: false,
        })
    }
}

pub fn check_alpha(alpha: f64) -> Result<(), DivergenceError> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(DivergenceError::InvalidAlpha(alpha))
    }
}

fn score_pair(
    model: &TfIdfModel,
    original: &TokenSequence,
    ablated: &TokenSequence,
    alpha: f64,
) -> Result<DivergenceScore, DivergenceError> {
    // identical outputs are maximally similar, even when they carry no terms
    let (cos, zero_norm) = if original == ablated {
        (1.0, original.is_empty())
    } else {
        cosine_similarity_flagged(&model.transform(original), &model.transform(ablated))
    };
    let ned = normalized_edit_distance(original, ablated);
    let mut score = DivergenceScore::combine(cos, ned, alpha)?;
    score.zero_norm = zero_norm;
    Ok(score)
}

/// Divergence of `ablated` from `original`, with IDF fitted on `corpus`
/// (which must contain both responses).
pub fn divergence(
    original: &TokenSequence,
    ablated: &TokenSequence,
    corpus: &[TokenSequence],
    alpha: f64,
) -> Result<DivergenceScore, DivergenceError> {
    check_alpha(alpha)?;
    let model = TfIdfModel::fit(corpus)?;
    if !corpus.contains(original) || !corpus.contains(ablated) {
        return Err(DivergenceError::NotInCorpus);
    }
    score_pair(&model, original, ablated, alpha)
}

/// Scores every ablated response against the original, fitting IDF on the
/// per-question set `{original} ∪ ablated`.
pub fn score_responses(original: &str, ablated: &[&str], alpha: f64) -> Result<Vec<DivergenceScore>, DivergenceError> {
    check_alpha(alpha)?;
    let original = tokenize(original);
    let ablated: Vec<TokenSequence> = ablated.iter().map(|t| tokenize(t)).collect();
    let mut corpus = Vec::with_capacity(ablated.len() + 1);
    corpus.push(original.clone());
    corpus.extend(ablated.iter().cloned());
    let model = TfIdfModel::fit(&corpus)?;
    ablated.iter().map(|a| score_pair(&model, &original, a, alpha)).collect()
}
