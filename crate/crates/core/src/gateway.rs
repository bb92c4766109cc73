//! Chat-completion client with a content-addressed replay cache.
//!
//! Requests go to an OpenAI-style `POST {messages: [system, user]}` endpoint
//! (Ollama's `/api/chat` replies are also understood). Every live response
//! is written to the replay cache; in replay-only mode a cache miss is an
//! error, which makes a whole analysis run a pure function of its inputs
//! and the cache directory.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::digest::sha256_hex;

/// Exam-taking protocol sent as the system role.
pub const SYSTEM_PROMPT: &str = "You are a undergrad student taking an exam. Answer each question thoroughly, completely and show all steps.\n\
Do NOT use LaTeX or math markup of any kind. Use plain, human readable math notation only (e.g., f(x) = x^2/4, not \\frac{x^2}{4}).\n\
Do not include any $$, \\( \\), or backslashes. Write math as it would appear on paper using keyboard characters.";

const CONTEXT_SEPARATOR: &str = "\n\n---\n";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    HttpError { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("no cached response for request {key} (replay-only mode)")]
    ReplayMiss { key: String },
    #[error("malformed endpoint response: {0}")]
    BadResponse(String),
    #[error("endpoint returned an empty completion")]
    EmptyResponse,
    #[error("user text is empty")]
    EmptyUserText,
    #[error("custom system prompt override is empty")]
    OverrideEmpty,
    #[error("parallelism must be at least 1")]
    BadParallelism,
    #[error("replay cache {path}: {source}")]
    Cache {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt replay cache entry {path}: {source}")]
    CorruptEntry {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl GatewayError {
    /// Failures worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::EndpointUnreachable(_) | GatewayError::Timeout => true,
            GatewayError::HttpError { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemPromptOptions {
    /// Replaces the built-in protocol text.
    pub override_text: Option<String>,
    /// Appended after a separator, e.g. a note that reference material follows.
    pub context_preamble: Option<String>,
}

pub fn build_system_prompt(options: &SystemPromptOptions) -> Result<String, GatewayError> {
    let base = match &options.override_text {
        Some(text) if text.trim().is_empty() => return Err(GatewayError::OverrideEmpty),
        Some(text) => text.clone(),
        None => SYSTEM_PROMPT.to_string(),
    };
    Ok(match &options.context_preamble {
        Some(preamble) => format!("{base}{CONTEXT_SEPARATOR}{preamble}"),
        None => base,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_name: String,
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl CompletionRequest {
    /// A request carrying the default system protocol at temperature 0.
    pub fn new(model_name: impl Into<String>, user_text: impl Into<String>) -> Self {
        Self {
            model_name: model_name.into(),
            system_text: SYSTEM_PROMPT.to_string(),
            user_text: user_text.into(),
            temperature: 0.0,
            max_tokens: None,
        }
    }

    /// Hex digest over (model, system, user, temperature).
    pub fn cache_key(&self) -> String {
        let material = json!([self.model_name, self.system_text, self.user_text, self.temperature]);
        sha256_hex(material.to_string().as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseSource {
    Live,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub latency_ms: u64,
    pub source: ResponseSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub text: String,
    pub latency_ms: u64,
}

/// On-disk cache record: the full request next to the response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request: CompletionRequest,
    pub response: CachedResponse,
}

/// Responses stored as `<root>/<first two hex chars>/<digest>.json`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayCache {
    root: PathBuf,
}

impl ReplayCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, request: &CompletionRequest) -> Result<Option<CacheEntry>, GatewayError> {
        let path = self.entry_path(&request.cache_key());
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => {
                return Err(GatewayError::Cache {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        serde_json::from_slice(&bytes).map(Some).map_err(|source| GatewayError::CorruptEntry {
            path: path.display().to_string(),
            source,
        })
    }

    /// Writes the entry to a temporary file and renames it into place.
    pub fn put(&self, request: &CompletionRequest, text: &str, latency_ms: u64) -> Result<PathBuf, GatewayError> {
        let key = request.cache_key();
        let path = self.entry_path(&key);
        let io_err = |source| GatewayError::Cache {
            path: path.display().to_string(),
            source,
        };
        let dir = path.parent().expect("entry path has a parent");
        std::fs::create_dir_all(dir).map_err(io_err)?;
        let entry = CacheEntry {
            key,
            request: request.clone(),
            response: CachedResponse {
                text: text.to_string(),
                latency_ms,
            },
        };
        let mut body = serde_json::to_string_pretty(&entry).expect("cache entry serializes");
        body.push('\n');
        static COUNTER: AtomicUsize = AtomicUsize::new(0);
        let tmp = dir.join(format!(
            ".{}.{}.{}.tmp",
            entry.key,
            std::process::id(),
            COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::write(&tmp, body).map_err(io_err)?;
        std::fs::rename(&tmp, &path).map_err(io_err)?;
        Ok(path)
    }
}

/// The `endpoint.*` configuration keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    pub path: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub parallelism: usize,
    pub timeout_ms: u64,
    /// Environment variable holding the auth token, if any.
    pub auth_env: Option<String>,
    pub auth_header: String,
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: "http://localhost:11434".to_string(),
            path: "/v1/chat/completions".to_string(),
            model: "gemma3:latest".to_string(),
            temperature: 0.0,
            max_tokens: None,
            parallelism: 4,
            timeout_ms: 120_000,
            auth_env: None,
            auth_header: "Authorization".to_string(),
            retries: 3,
            backoff_ms: 500,
        }
    }
}

impl EndpointConfig {
    pub fn full_url(&self) -> String {
        format!("{}/{}", self.url.trim_end_matches('/'), self.path.trim_start_matches('/'))
    }

    pub fn request(&self, system_text: &str, user_text: &str) -> CompletionRequest {
        CompletionRequest {
            model_name: self.model.clone(),
            system_text: system_text.to_string(),
            user_text: user_text.to_string(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }

    /// `(header, value)` when `auth_env` names a set variable. Bearer scheme
    /// for `Authorization`, raw token otherwise.
    pub fn auth(&self) -> Option<(String, String)> {
        let var = self.auth_env.as_deref()?;
        let token = std::env::var(var).ok().filter(|t| !t.is_empty())?;
        let value = if self.auth_header.eq_ignore_ascii_case("authorization") {
            format!("Bearer {token}")
        } else {
            token
        };
        Some((self.auth_header.clone(), value))
    }
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, request: &CompletionRequest) -> Result<String, GatewayError>;
}

/// Minimal JSON-over-HTTP poster shared by the chat and embedding clients.
#[derive(Debug, Clone)]
pub(crate) struct JsonPoster {
    agent: ureq::Agent,
    url: String,
    auth: Option<(String, String)>,
}

impl JsonPoster {
    pub(crate) fn new(url: String, timeout_ms: u64, auth: Option<(String, String)>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, url, auth }
    }

    pub(crate) fn post(&self, body: &Value) -> Result<Value, GatewayError> {
        let mut req = self.agent.post(&self.url);
        if let Some((name, value)) = &self.auth {
            req = req.header(name.as_str(), value.as_str());
        }
        let mut resp = req.send_json(body).map_err(map_ureq_error)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(map_ureq_error)?;
        if status >= 400 {
            return Err(GatewayError::HttpError { status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| GatewayError::BadResponse(e.to_string()))
    }
}

fn map_ureq_error(err: ureq::Error) -> GatewayError {
    match err {
        ureq::Error::Timeout(_) => GatewayError::Timeout,
        ureq::Error::StatusCode(status) => GatewayError::HttpError {
            status,
            body: String::new(),
        },
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => GatewayError::Timeout,
        other => GatewayError::EndpointUnreachable(other.to_string()),
    }
}

/// Chat endpoint over HTTP.
#[derive(Debug, Clone)]
pub struct HttpChatBackend {
    poster: JsonPoster,
}

impl HttpChatBackend {
    pub fn new(config: &EndpointConfig) -> Self {
        Self {
            poster: JsonPoster::new(config.full_url(), config.timeout_ms, config.auth()),
        }
    }
}

/// Pulls the completion text out of an OpenAI- or Ollama-style reply.
pub fn extract_completion_text(body: &Value) -> Result<String, GatewayError> {
    let text = body
        .pointer("/choices/0/message/content")
        .or_else(|| body.pointer("/message/content"))
        .or_else(|| body.pointer("/response"))
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::BadResponse("no completion text in reply".to_string()))?;
    Ok(text.to_string())
}

impl ChatBackend for HttpChatBackend {
    fn chat(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let mut body = json!({
            "model": request.model_name,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
            "stream": false,
        });
        if let Some(max) = request.max_tokens {
            body["max_tokens"] = json!(max);
        }
        extract_completion_text(&self.poster.post(&body)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// Cache-first completion client.
#[derive(Clone)]
pub struct Gateway {
    backend: Option<Arc<dyn ChatBackend>>,
    cache: Option<ReplayCache>,
    replay_only: bool,
    retry: RetryPolicy,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("has_backend", &self.backend.is_some())
            .field("cache", &self.cache)
            .field("replay_only", &self.replay_only)
            .field("retry", &self.retry)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Option<Arc<dyn ChatBackend>>, cache: Option<ReplayCache>) -> Self {
        Self {
            backend,
            cache,
            replay_only: false,
            retry: RetryPolicy::default(),
        }
    }

    /// Answers only from the cache; never touches the network.
    pub fn replay_only(cache: ReplayCache) -> Self {
        Self {
            backend: None,
            cache: Some(cache),
            replay_only: true,
            retry: RetryPolicy::default(),
        }
    }

    pub fn from_config(config: &EndpointConfig, cache: Option<ReplayCache>, replay_only: bool) -> Self {
        let backend: Option<Arc<dyn ChatBackend>> = if replay_only {
            None
        } else {
            Some(Arc::new(HttpChatBackend::new(config)))
        };
        Self {
            backend,
            cache,
            replay_only,
            retry: RetryPolicy {
                attempts: config.retries.max(1),
                base_delay: Duration::from_millis(config.backoff_ms),
            },
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn set_replay_only(&mut self, replay_only: bool) {
        self.replay_only = replay_only;
    }

    pub fn is_replay_only(&self) -> bool {
        self.replay_only
    }

    pub fn cache(&self) -> Option<&ReplayCache> {
        self.cache.as_ref()
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        if request.user_text.trim().is_empty() {
            return Err(GatewayError::EmptyUserText);
        }
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(request)? {
                return Ok(CompletionResponse {
                    text: entry.response.text,
                    latency_ms: 0,
                    source: ResponseSource::Replay,
                });
            }
        }
        if self.replay_only {
            return Err(GatewayError::ReplayMiss {
                key: request.cache_key(),
            });
        }
        let backend = self
            .backend
            .as_ref()
            .ok_or_else(|| GatewayError::EndpointUnreachable("no endpoint configured".to_string()))?;

        let started = Instant::now();
        let text = self.with_retries(|| backend.chat(request))?;
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyResponse);
        }
        let latency_ms = started.elapsed().as_millis() as u64;
        if let Some(cache) = &self.cache {
            cache.put(request, &text, latency_ms)?;
        }
        Ok(CompletionResponse {
            text,
            latency_ms,
            source: ResponseSource::Live,
        })
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let attempts = self.retry.attempts.max(1);
        let mut attempt = 0;
        loop {
            match call() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() && attempt + 1 < attempts => {
                    let delay = self.retry.base_delay * 2u32.saturating_pow(attempt);
                    log::warn!("attempt {} failed ({e}); retrying in {delay:?}", attempt + 1);
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Runs requests with at most `parallelism` in flight. Results come back
    /// in request order; one failure does not abort the batch.
    pub fn run_trials(
        &self,
        requests: &[CompletionRequest],
        parallelism: usize,
    ) -> Result<Vec<Result<CompletionResponse, GatewayError>>, GatewayError> {
        if parallelism == 0 {
            return Err(GatewayError::BadParallelism);
        }
        Ok(crate::par::bounded_map(requests, parallelism, |r| self.complete(r)))
    }
}
