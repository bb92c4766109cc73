//! Knowledge augmentation: keyword-filtered RAG over an exact cosine index,
//! and contextual prompting with curated documents inlined.
//!
//! Chunk spans are in characters (Unicode scalar values), not bytes.

use std::cmp::Ordering;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{GatewayError, JsonPoster, SYSTEM_PROMPT};
use crate::lexicon::find_lexeme;

/// Fixed dimensionality of the built-in embedder.
pub const HASH_DIMS: usize = 256;

pub const CONTEXT_HEADER: &str = "Reference material:";
pub const CONTEXT_FOOTER: &str = "---";

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no filter keywords configured")]
    NoKeywords,
    #[error("bad retrieval config: {0}")]
    BadConfig(String),
    #[error("vector index is empty")]
    EmptyIndex,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("question alone needs {needed} tokens, budget is {budget}")]
    ContextOverflow { needed: usize, budget: usize },
    #[error("embedding endpoint: {0}")]
    Endpoint(#[from] GatewayError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("index snapshot {path}: {source}")]
    Snapshot {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("manifest {path} line {line}: {message}")]
    Manifest { path: String, line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RetrievalError + '_ {
    move |source| RetrievalError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    #[default]
    Rag,
    Contextual,
}

impl fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RetrievalMode::Rag => "rag",
            RetrievalMode::Contextual => "contextual",
        })
    }
}

impl FromStr for RetrievalMode {
    type Err = RetrievalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rag" => Ok(RetrievalMode::Rag),
            "contextual" => Ok(RetrievalMode::Contextual),
            other => Err(RetrievalError::BadConfig(format!("unknown retrieval mode {other:?}"))),
        }
    }
}

/// The `[retrieval]` configuration table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub chunk_size: usize,
    pub overlap: usize,
    pub top_k: usize,
    pub keywords: Vec<String>,
    pub mode: RetrievalMode,
    /// Whitespace-token budget for the assembled user prompt.
    pub token_budget: usize,
    pub corpus_dir: Option<PathBuf>,
    pub index_path: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            chunk_size: 800,
            overlap: 200,
            top_k: 4,
            keywords: vec!["derivatives".into(), "integrals".into(), "optimization".into()],
            mode: RetrievalMode::Rag,
            token_budget: 4096,
            corpus_dir: None,
            index_path: None,
            manifest: None,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.chunk_size == 0 {
            return Err(RetrievalError::BadConfig("chunk_size must be positive".into()));
        }
        if self.overlap >= self.chunk_size {
            return Err(RetrievalError::BadConfig(format!(
                "overlap {} must be smaller than chunk_size {}",
                self.overlap, self.chunk_size
            )));
        }
        if self.top_k == 0 {
            return Err(RetrievalError::BadConfig("top_k must be at least 1".into()));
        }
        if self.token_budget == 0 {
            return Err(RetrievalError::BadConfig("token_budget must be positive".into()));
        }
        Ok(())
    }
}

/// A source document: `doc_id` is its path relative to the corpus root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSegment {
    pub doc_id: String,
    /// Paragraph index within the document.
    pub paragraph: usize,
    pub text: String,
    pub matched_keywords: Vec<String>,
}

static PARAGRAPH_BREAK_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\n[ \t]*\n").unwrap());

pub fn paragraphs(text: &str) -> Vec<&str> {
    PARAGRAPH_BREAK_RE
        .split(text)
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect()
}

/// Paragraphs containing at least one keyword (whole word, any case).
pub fn filter_segments(docs: &[CorpusDoc], keywords: &[String]) -> Result<Vec<CorpusSegment>, RetrievalError> {
    if docs.iter().all(|d| d.text.trim().is_empty()) {
        return Err(RetrievalError::EmptyCorpus);
    }
    let keywords: Vec<&str> = keywords.iter().map(|k| k.trim()).filter(|k| !k.is_empty()).collect();
    if keywords.is_empty() {
        return Err(RetrievalError::NoKeywords);
    }
    let mut out = Vec::new();
    for doc in docs {
        for (paragraph, text) in paragraphs(&doc.text).into_iter().enumerate() {
            let matched: Vec<String> = keywords
                .iter()
                .filter(|k| !find_lexeme(text, k).is_empty())
                .map(|k| k.to_string())
                .collect();
            if !matched.is_empty() {
                out.push(CorpusSegment {
                    doc_id: doc.doc_id.clone(),
                    paragraph,
                    text: text.to_string(),
                    matched_keywords: matched,
                });
            }
        }
    }
    if out.is_empty() {
        log::warn!("no corpus paragraph matched the keywords {keywords:?}");
    }
    Ok(out)
}

/// Character spans of a sliding window with stride `size - overlap`. The
/// last window ends at `len`.
pub fn chunk_spans(len: usize, size: usize, overlap: usize) -> Result<Vec<(usize, usize)>, RetrievalError> {
    if size == 0 || overlap >= size {
        return Err(RetrievalError::BadConfig(format!(
            "need 0 <= overlap < chunk_size, got overlap {overlap}, chunk_size {size}"
        )));
    }
    let stride = size - overlap;
    let mut spans = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + size).min(len);
        spans.push((start, end));
        if end == len {
            break;
        }
        start += stride;
    }
    Ok(spans)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextChunk {
    pub doc_id: String,
    pub paragraph: usize,
    pub text: String,
    pub char_span: (usize, usize),
}

pub fn chunk(segment: &CorpusSegment, chunk_size: usize, overlap: usize) -> Result<Vec<TextChunk>, RetrievalError> {
    let chars: Vec<char> = segment.text.chars().collect();
    Ok(chunk_spans(chars.len(), chunk_size, overlap)?
        .into_iter()
        .map(|(s, e)| TextChunk {
            doc_id: segment.doc_id.clone(),
            paragraph: segment.paragraph,
            text: chars[s..e].iter().collect(),
            char_span: (s, e),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

pub trait Embedder: Send + Sync {
    /// Stable identifier recorded in index snapshots.
    fn name(&self) -> String;
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError>;
}

/// Hashed bag of lowercase words, 256 dims, L2-normalized. Word buckets come
/// from SHA-256, so vectors are stable across platforms and releases.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashEmbedder;

impl HashEmbedder {
    pub fn embed_one(text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; HASH_DIMS];
        let lower = text.to_lowercase();
        for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            let digest = Sha256::digest(word.as_bytes());
            let bucket = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes")) % HASH_DIMS as u64;
            values[bucket as usize] += 1.0;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector { values }
    }
}

impl Embedder for HashEmbedder {
    fn name(&self) -> String {
        format!("hash-bow-{HASH_DIMS}")
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        Ok(texts.iter().map(|t| Self::embed_one(t)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingProvider {
    #[default]
    Hash,
    Http,
}

/// The `embedding.*` configuration keys; the HTTP ones mirror `endpoint.*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub provider: EmbeddingProvider,
    pub url: String,
    pub path: String,
    pub model: String,
    pub timeout_ms: u64,
    pub auth_env: Option<String>,
    pub auth_header: String,
    pub batch_size: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            provider: EmbeddingProvider::Hash,
            url: "http://localhost:11434".into(),
            path: "/v1/embeddings".into(),
            model: "nomic-embed-text".into(),
            timeout_ms: 60_000,
            auth_env: None,
            auth_header: "Authorization".into(),
            batch_size: 32,
        }
    }
}

impl EmbeddingConfig {
    pub fn embedder(&self) -> Box<dyn Embedder> {
        match self.provider {
            EmbeddingProvider::Hash => Box::new(HashEmbedder),
            EmbeddingProvider::Http => Box::new(HttpEmbedder::new(self)),
        }
    }
}

/// OpenAI-style `/v1/embeddings` or Ollama `/api/embed` client.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    poster: JsonPoster,
    model: String,
    batch_size: usize,
}

impl HttpEmbedder {
    pub fn new(config: &EmbeddingConfig) -> Self {
        let endpoint = crate::gateway::EndpointConfig {
            url: config.url.clone(),
            path: config.path.clone(),
            auth_env: config.auth_env.clone(),
            auth_header: config.auth_header.clone(),
            ..Default::default()
        };
        Self {
            poster: JsonPoster::new(endpoint.full_url(), config.timeout_ms, endpoint.auth()),
            model: config.model.clone(),
            batch_size: config.batch_size.max(1),
        }
    }
}

fn parse_embeddings(body: &Value) -> Result<Vec<EmbeddingVector>, GatewayError> {
    let rows: Vec<&Value> = if let Some(data) = body.get("data").and_then(Value::as_array) {
        data.iter().map(|d| &d["embedding"]).collect()
    } else if let Some(e) = body.get("embeddings").and_then(Value::as_array) {
        e.iter().collect()
    } else {
        return Err(GatewayError::BadResponse("no embeddings in reply".into()));
    };
    rows.into_iter()
        .map(|row| {
            let values = row
                .as_array()
                .ok_or_else(|| GatewayError::BadResponse("embedding is not an array".into()))?
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| GatewayError::BadResponse("non-numeric embedding value".into())))
                .collect::<Result<Vec<f64>, _>>()?;
            Ok(EmbeddingVector { values })
        })
        .collect()
}

impl Embedder for HttpEmbedder {
    fn name(&self) -> String {
        format!("http:{}", self.model)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            let reply = self.poster.post(&json!({"model": self.model, "input": batch}))?;
            let vectors = parse_embeddings(&reply)?;
            if vectors.len() != batch.len() {
                return Err(GatewayError::BadResponse(format!(
                    "asked for {} embeddings, got {}",
                    batch.len(),
                    vectors.len()
                ))
                .into());
            }
            out.extend(vectors);
        }
        Ok(out)
    }
}

/// Embeds `texts`, checking that every vector has the same dimensionality.
pub fn embed(texts: &[String], embedder: &dyn Embedder) -> Result<Vec<EmbeddingVector>, RetrievalError> {
    let vectors = embedder.embed(texts)?;
    if let Some(first) = vectors.first() {
        let expected = first.dims();
        if let Some(bad) = vectors.iter().find(|v| v.dims() != expected) {
            return Err(RetrievalError::DimensionMismatch {
                expected,
                got: bad.dims(),
            });
        }
    }
    if vectors.iter().any(EmbeddingVector::is_zero) {
        log::warn!("{} text(s) embedded to the zero vector", vectors.iter().filter(|v| v.is_zero()).count());
    }
    Ok(vectors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusChunk {
    pub chunk_id: u64,
    pub doc_id: String,
    pub paragraph: usize,
    pub text: String,
    pub char_span: (usize, usize),
    pub vector: EmbeddingVector,
}

/// Parameters an index was built with, stored in its snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexParams {
    pub chunk_size: usize,
    pub overlap: usize,
    pub keywords: Vec<String>,
    pub embedder: String,
}

/// Exact cosine index. Built once, then read-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorIndex {
    pub params: IndexParams,
    pub dims: usize,
    pub chunks: Vec<CorpusChunk>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk: CorpusChunk,
    pub similarity: f64,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Descending similarity, then ascending chunk id.
fn rank_order(a: &(f64, u64), b: &(f64, u64)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

impl VectorIndex {
    pub fn new(params: IndexParams, chunks: Vec<CorpusChunk>) -> Result<Self, RetrievalError> {
        let dims = chunks.first().map_or(0, |c| c.vector.dims());
        if let Some(bad) = chunks.iter().find(|c| c.vector.dims() != dims) {
            return Err(RetrievalError::DimensionMismatch {
                expected: dims,
                got: bad.vector.dims(),
            });
        }
        Ok(Self { params, dims, chunks })
    }

    /// Filters, chunks and embeds `docs`. Chunk ids follow document order.
    pub fn build(docs: &[CorpusDoc], config: &RetrievalConfig, embedder: &dyn Embedder) -> Result<Self, RetrievalError> {
        config.validate()?;
        let segments = filter_segments(docs, &config.keywords)?;
        let mut pieces = Vec::new();
        for segment in &segments {
            pieces.extend(chunk(segment, config.chunk_size, config.overlap)?);
        }
        let texts: Vec<String> = pieces.iter().map(|p| p.text.clone()).collect();
        let vectors = embed(&texts, embedder)?;
        let chunks = pieces
            .into_iter()
            .zip(vectors)
            .enumerate()
            .map(|(i, (p, vector))| CorpusChunk {
                chunk_id: i as u64,
                doc_id: p.doc_id,
                paragraph: p.paragraph,
                text: p.text,
                char_span: p.char_span,
                vector,
            })
            .collect();
        Self::new(
            IndexParams {
                chunk_size: config.chunk_size,
                overlap: config.overlap,
                keywords: config.keywords.clone(),
                embedder: embedder.name(),
            },
            chunks,
        )
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Exact top-k by cosine similarity; `k` is clamped to the index size.
    pub fn query_topk(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredChunk>, RetrievalError> {
        if self.chunks.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        if k == 0 {
            return Err(RetrievalError::BadConfig("k must be at least 1".into()));
        }
        if query.dims() != self.dims {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dims,
                got: query.dims(),
            });
        }
        let mut scored: Vec<(f64, u64, usize)> = self
            .chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (cosine(&query.values, &c.vector.values), c.chunk_id, i))
            .collect();
        let cmp = |a: &(f64, u64, usize), b: &(f64, u64, usize)| rank_order(&(a.0, a.1), &(b.0, b.1));
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(similarity, _, i)| ScoredChunk {
                chunk: self.chunks[i].clone(),
                similarity,
            })
            .collect())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("index serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(path, self.to_json()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let index: Self = serde_json::from_str(&text).map_err(|source| RetrievalError::Snapshot {
            path: path.display().to_string(),
            source,
        })?;
        Self::new(index.params, index.chunks)
    }
}

/// Embeds the question and returns the top `k` chunks.
pub fn retrieve(
    index: &VectorIndex,
    embedder: &dyn Embedder,
    question: &str,
    k: usize,
) -> Result<Vec<ScoredChunk>, RetrievalError> {
    let query = embed(&[question.to_string()], embedder)?
        .pop()
        .expect("one vector per text");
    index.query_topk(&query, k)
}

/// Reads every `.txt`/`.md` file under `dir`, sorted by relative path.
pub fn load_corpus_dir(dir: &Path) -> Result<Vec<CorpusDoc>, RetrievalError> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), RetrievalError> {
        for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
            let path = entry.map_err(io_err(dir))?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if matches!(path.extension().and_then(|e| e.to_str()), Some("txt" | "md")) {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, &mut files)?;
    let mut docs: Vec<CorpusDoc> = files
        .iter()
        .map(|path| {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            let rel = path.strip_prefix(dir).unwrap_or(path);
            let doc_id = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            Ok(CorpusDoc { doc_id, text })
        })
        .collect::<Result<_, RetrievalError>>()?;
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    if docs.iter().all(|d| d.text.trim().is_empty()) {
        return Err(RetrievalError::EmptyCorpus);
    }
    Ok(docs)
}

/// Contextual-mode manifest: one document path per line, highest priority
/// first. Relative paths resolve against the manifest's directory; blank
/// lines and `#` comments are ignored.
pub fn load_manifest(path: &Path) -> Result<Vec<CorpusDoc>, RetrievalError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let entry = line.trim();
        if entry.is_empty() || entry.starts_with('#') {
            continue;
        }
        let doc_path = base.join(entry);
        let body = std::fs::read_to_string(&doc_path).map_err(|e| RetrievalError::Manifest {
            path: path.display().to_string(),
            line: i + 1,
            message: format!("{}: {e}", doc_path.display()),
        })?;
        docs.push(CorpusDoc {
            doc_id: entry.to_string(),
            text: body,
        });
    }
    if docs.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    Ok(docs)
}

/// What, if anything, to put above the question.
#[derive(Debug, Clone, PartialEq)]
pub enum PromptContext {
    Baseline,
    Rag(Vec<ScoredChunk>),
    Contextual(Vec<CorpusDoc>),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Truncation {
    pub truncated: bool,
    /// Citation of the item cut short, if any.
    pub shortened: Option<String>,
    /// Citations of items left out entirely.
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledPrompt {
    pub system_text: String,
    pub user_text: String,
    pub truncation: Truncation,
}

pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// `text` cut after its `n`-th whitespace-separated token.
fn first_tokens(text: &str, n: usize) -> &str {
    static TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\S+").unwrap());
    match TOKEN_RE.find_iter(text).nth(n.saturating_sub(1)) {
        Some(m) if n > 0 => &text[..m.end()],
        _ => "",
    }
}

/// Builds the user prompt. Context items go under a `Reference material:`
/// header, each prefixed by its citation, in rank/priority order, followed
/// by a `---` line and the question. Items are kept whole while they fit the
/// token budget; the first that does not is cut short and the rest dropped.
pub fn assemble_prompt(question: &str, context: &PromptContext, token_budget: usize) -> Result<AssembledPrompt, RetrievalError> {
    let items: Vec<(String, &str)> = match context {
        PromptContext::Baseline => {
            return Ok(AssembledPrompt {
                system_text: SYSTEM_PROMPT.to_string(),
                user_text: question.to_string(),
                truncation: Truncation::default(),
            })
        }
        PromptContext::Rag(chunks) => chunks
            .iter()
            .map(|c| (format!("[{}:{}]", c.chunk.doc_id, c.chunk.chunk_id), c.chunk.text.as_str()))
            .collect(),
        PromptContext::Contextual(docs) => docs.iter().map(|d| (format!("[{}]", d.doc_id), d.text.trim())).collect(),
    };

    let overhead = count_tokens(CONTEXT_HEADER) + count_tokens(CONTEXT_FOOTER);
    let needed = count_tokens(question) + overhead;
    if needed > token_budget {
        return Err(RetrievalError::ContextOverflow {
            needed,
            budget: token_budget,
        });
    }
    let mut remaining = token_budget - needed;
    let mut blocks = Vec::new();
    let mut truncation = Truncation::default();
    for (citation, text) in items {
        let cost = count_tokens(&citation) + count_tokens(text);
        if truncation.truncated {
            truncation.dropped.push(citation);
        } else if cost <= remaining {
            remaining -= cost;
            blocks.push(format!("{citation} {text}"));
        } else {
            truncation.truncated = true;
            let fit = remaining.saturating_sub(count_tokens(&citation));
            if fit > 0 {
                blocks.push(format!("{citation} {}", first_tokens(text, fit)));
                truncation.shortened = Some(citation);
                remaining = 0;
            } else {
                truncation.dropped.push(citation);
            }
        }
    }
    let user_text = if blocks.is_empty() {
        question.to_string()
    } else {
        format!("{CONTEXT_HEADER}\n{}\n{CONTEXT_FOOTER}\n{question}", blocks.join("\n\n"))
    };
    Ok(AssembledPrompt {
        system_text: SYSTEM_PROMPT.to_string(),
        user_text,
        truncation,
    })
}
