//! Provider-agnostic model gateway: caching, bounded-concurrency batching,
//! retry with backoff, and the offline scripted/replay providers that make
//! the whole pipeline testable without network access.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, LabeledComment};
use crate::promptkit::{render_prompt, render_system, render_user, PromptSpec};

pub const API_KEY_ENV: &str = "MODGATE_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    LiveHttp,
    Replay,
    Scripted,
}

/// Generation and transport parameters for one model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub provider: ProviderKind,
    pub model_id: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_ms")]
    pub request_timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency_limit: usize,
}

fn default_temperature() -> f64 {
    0.1
}
fn default_top_p() -> f64 {
    0.9
}
fn default_max_tokens() -> u32 {
    150
}
fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_concurrency() -> usize {
    4
}

impl ModelConfig {
    pub fn offline(provider: ProviderKind, model_id: impl Into<String>) -> ModelConfig {
        ModelConfig {
            provider,
            model_id: model_id.into(),
            endpoint: None,
            temperature: default_temperature(),
            top_p: default_top_p(),
            max_tokens: default_max_tokens(),
            request_timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            concurrency_limit: default_concurrency(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.temperature < 0.0 {
            return Err(GatewayError::Config("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::Config("top_p must be in (0, 1]".into()));
        }
        if self.max_tokens < 1 {
            return Err(GatewayError::Config("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// A model response exactly as received, plus transport metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawResponse {
    pub request_digest: String,
    pub model_id: String,
    pub content: String,
    pub latency_ms: u64,
    pub attempt: u32,
    pub from_cache: bool,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("provider error after {attempts} attempt(s): {cause}")]
    Provider { attempts: u32, cause: String },
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("replay miss for comment {comment_id} (digest {digest})")]
    ReplayMiss { comment_id: String, digest: String },
    #[error("missing API key: set {API_KEY_ENV}")]
    MissingApiKey,
}

/// Cache key: digest over model id, generation parameters, and the exact
/// rendered prompt bytes. Identical requests always share a key.
pub fn request_digest(config: &ModelConfig, rendered: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"modgate-request-v1\x00");
    hasher.update(config.model_id.as_bytes());
    hasher.update(b"\x00");
    hasher.update(format!("{:.4}", config.temperature).as_bytes());
    hasher.update(b"\x00");
    hasher.update(format!("{:.4}", config.top_p).as_bytes());
    hasher.update(b"\x00");
    hasher.update(config.max_tokens.to_le_bytes());
    hasher.update(b"\x00");
    hasher.update(rendered.as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    digest: String,
    model_id: String,
    content: String,
}

/// Verbatim response cache, keyed by request digest. Optionally backed by
/// a line-delimited file; writes are append-only so an interrupted run can
/// resume from what it already fetched.
pub struct ResponseCache {
    entries: Mutex<HashMap<String, String>>,
    file: Option<Mutex<std::fs::File>>,
    path: Option<PathBuf>,
}

impl ResponseCache {
    pub fn in_memory() -> ResponseCache {
        ResponseCache {
            entries: Mutex::new(HashMap::new()),
            file: None,
            path: None,
        }
    }

    /// Opens (or creates) a file-backed cache, loading any existing
    /// records.
    pub fn open(path: impl AsRef<Path>) -> Result<ResponseCache, GatewayError> {
        let path = path.as_ref();
        let entries = if path.exists() {
            load_cache_file(path)?
        } else {
            HashMap::new()
        };
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))?;
        Ok(ResponseCache {
            entries: Mutex::new(entries),
            file: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
        })
    }

    /// Loads a recorded session strictly for replay: lookups only, no
    /// writes.
    pub fn load_replay(path: impl AsRef<Path>) -> Result<ResponseCache, GatewayError> {
        let path = path.as_ref();
        Ok(ResponseCache {
            entries: Mutex::new(load_cache_file(path)?),
            file: None,
            path: Some(path.to_path_buf()),
        })
    }

    pub fn get(&self, digest: &str) -> Option<String> {
        self.entries.lock().unwrap().get(digest).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Atomic get-or-insert: the first stored content for a digest wins
    /// and every later call sees it.
    pub fn insert(
        &self,
        digest: &str,
        model_id: &str,
        content: &str,
    ) -> Result<String, GatewayError> {
        let mut entries = self.entries.lock().unwrap();
        if let Some(existing) = entries.get(digest) {
            return Ok(existing.clone());
        }
        entries.insert(digest.to_string(), content.to_string());
        drop(entries);
        if let Some(file) = &self.file {
            let record = CacheRecord {
                digest: digest.to_string(),
                model_id: model_id.to_string(),
                content: content.to_string(),
            };
            let line = serde_json::to_string(&record)
                .map_err(|e| GatewayError::Cache(e.to_string()))?;
            let mut file = file.lock().unwrap();
            file.write_all(line.as_bytes())
                .and_then(|_| file.write_all(b"\n"))
                .map_err(|e| GatewayError::Cache(e.to_string()))?;
        }
        Ok(content.to_string())
    }
}

fn load_cache_file(path: &Path) -> Result<HashMap<String, String>, GatewayError> {
    let file = std::fs::File::open(path)
        .map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))?;
    let mut entries = HashMap::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| GatewayError::Cache(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CacheRecord =
            serde_json::from_str(&line).map_err(|e| GatewayError::Cache(e.to_string()))?;
        entries.insert(record.digest, record.content);
    }
    Ok(entries)
}

/// One outbound request as the provider sees it.
pub struct PromptRequest<'a> {
    pub digest: &'a str,
    pub comment_id: &'a str,
    pub system: &'a str,
    pub user: &'a str,
}

pub trait Provider: Send + Sync {
    fn complete(&self, config: &ModelConfig, request: &PromptRequest<'_>)
        -> Result<ProviderResponse, GatewayError>;
}

pub struct ProviderResponse {
    pub content: String,
    pub attempt: u32,
}

impl<P: Provider> Provider for std::sync::Arc<P> {
    fn complete(
        &self,
        config: &ModelConfig,
        request: &PromptRequest<'_>,
    ) -> Result<ProviderResponse, GatewayError> {
        (**self).complete(config, request)
    }
}

/// Answers from a fixed comment-id -> content map. Test fixture provider;
/// counts calls so tests can assert cache behavior.
pub struct ScriptedProvider {
    responses: HashMap<String, String>,
    calls: AtomicUsize,
}

impl ScriptedProvider {
    pub fn new(responses: HashMap<String, String>) -> ScriptedProvider {
        ScriptedProvider {
            responses,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Provider for ScriptedProvider {
    fn complete(
        &self,
        _config: &ModelConfig,
        request: &PromptRequest<'_>,
    ) -> Result<ProviderResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match self.responses.get(request.comment_id) {
            Some(content) => Ok(ProviderResponse {
                content: content.clone(),
                attempt: 1,
            }),
            None => Err(GatewayError::Provider {
                attempts: 1,
                cause: format!("no scripted response for comment {}", request.comment_id),
            }),
        }
    }
}

/// Answers only from a recorded digest -> content store.
pub struct ReplayProvider {
    store: ResponseCache,
}

impl ReplayProvider {
    pub fn new(store: ResponseCache) -> ReplayProvider {
        ReplayProvider { store }
    }
}

impl Provider for ReplayProvider {
    fn complete(
        &self,
        _config: &ModelConfig,
        request: &PromptRequest<'_>,
    ) -> Result<ProviderResponse, GatewayError> {
        match self.store.get(request.digest) {
            Some(content) => Ok(ProviderResponse {
                content,
                attempt: 1,
            }),
            None => Err(GatewayError::ReplayMiss {
                comment_id: request.comment_id.to_string(),
                digest: request.digest.to_string(),
            }),
        }
    }
}

/// HTTPS chat-completion provider. Retries transport errors and throttling
/// statuses with exponential backoff and jitter; 4xx validation and auth
/// errors fail immediately.
pub struct LiveProvider {
    client: reqwest::blocking::Client,
    api_key: String,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

impl LiveProvider {
    /// Reads the API key from the environment. The key is held in memory
    /// only and never logged.
    pub fn from_env(timeout: Duration) -> Result<LiveProvider, GatewayError> {
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| GatewayError::MissingApiKey)?;
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(LiveProvider { client, api_key })
    }

    fn send_once(
        &self,
        config: &ModelConfig,
        request: &PromptRequest<'_>,
    ) -> Result<String, SendFailure> {
        let endpoint = config
            .endpoint
            .as_deref()
            .ok_or_else(|| SendFailure::Fatal("live provider requires an endpoint".into()))?;
        let body = ChatRequest {
            model: &config.model_id,
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: request.system,
                },
                ChatMessage {
                    role: "user",
                    content: request.user,
                },
            ],
            temperature: config.temperature,
            top_p: config.top_p,
            max_tokens: config.max_tokens,
        };
        let response = self
            .client
            .post(endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    SendFailure::Timeout
                } else {
                    SendFailure::Retryable(e.to_string())
                }
            })?;
        let status = response.status();
        if status.is_success() {
            let parsed: ChatResponse = response
                .json()
                .map_err(|e| SendFailure::Fatal(format!("malformed response body: {e}")))?;
            parsed
                .choices
                .into_iter()
                .next()
                .map(|c| c.message.content)
                .ok_or_else(|| SendFailure::Fatal("response had no choices".into()))
        } else if status.as_u16() == 429 || status.is_server_error() {
            Err(SendFailure::Retryable(format!("status {status}")))
        } else {
            Err(SendFailure::Fatal(format!("status {status}")))
        }
    }
}

enum SendFailure {
    Retryable(String),
    Fatal(String),
    Timeout,
}

impl Provider for LiveProvider {
    fn complete(
        &self,
        config: &ModelConfig,
        request: &PromptRequest<'_>,
    ) -> Result<ProviderResponse, GatewayError> {
        let mut attempt = 0u32;
        let mut last_cause = String::new();
        while attempt <= config.max_retries {
            attempt += 1;
            match self.send_once(config, request) {
                Ok(content) => return Ok(ProviderResponse { content, attempt }),
                Err(SendFailure::Fatal(cause)) => {
                    return Err(GatewayError::Provider {
                        attempts: attempt,
                        cause,
                    })
                }
                Err(SendFailure::Timeout) => {
                    last_cause = "timeout".into();
                }
                Err(SendFailure::Retryable(cause)) => {
                    last_cause = cause;
                }
            }
            if attempt <= config.max_retries {
                let base = 100u64.saturating_mul(1 << (attempt - 1).min(6));
                let jitter = rand::thread_rng().gen_range(0..=base / 2);
                std::thread::sleep(Duration::from_millis(base + jitter));
            }
        }
        if last_cause == "timeout" {
            return Err(GatewayError::Timeout(Duration::from_millis(
                config.request_timeout_ms,
            )));
        }
        Err(GatewayError::Provider {
            attempts: attempt,
            cause: last_cause,
        })
    }
}

/// Ties a config, provider, and cache together.
pub struct Gateway<'a> {
    config: ModelConfig,
    provider: Box<dyn Provider + 'a>,
}

impl<'a> Gateway<'a> {
    pub fn new(config: ModelConfig, provider: Box<dyn Provider + 'a>) -> Result<Gateway<'a>, GatewayError> {
        config.validate()?;
        Ok(Gateway { config, provider })
    }

    pub fn scripted(
        config: ModelConfig,
        responses: HashMap<String, String>,
    ) -> Result<Gateway<'a>, GatewayError> {
        Gateway::new(config, Box::new(ScriptedProvider::new(responses)))
    }

    pub fn replay(config: ModelConfig, store: ResponseCache) -> Result<Gateway<'a>, GatewayError> {
        Gateway::new(config, Box::new(ReplayProvider::new(store)))
    }

    pub fn live(config: ModelConfig) -> Result<Gateway<'a>, GatewayError> {
        let provider = LiveProvider::from_env(Duration::from_millis(config.request_timeout_ms))?;
        Gateway::new(config, Box::new(provider))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Classifies one comment: cache lookup by request digest, provider
    /// dispatch on miss, verbatim store of whatever came back (malformed
    /// responses included, so parse failures stay reproducible).
    pub fn classify_one(
        &self,
        spec: &PromptSpec,
        comment: &LabeledComment,
        cache: &ResponseCache,
    ) -> Result<RawResponse, GatewayError> {
        let rendered = render_prompt(spec, &comment.text);
        let digest = request_digest(&self.config, &rendered);

        if let Some(content) = cache.get(&digest) {
            return Ok(RawResponse {
                request_digest: digest,
                model_id: self.config.model_id.clone(),
                content,
                latency_ms: 0,
                attempt: 0,
                from_cache: true,
            });
        }

        let system = render_system(spec);
        let user = render_user(spec, &comment.text);
        let request = PromptRequest {
            digest: &digest,
            comment_id: &comment.id,
            system: &system,
            user: &user,
        };
        let started = Instant::now();
        let response = self.provider.complete(&self.config, &request)?;
        let content = cache.insert(&digest, &self.config.model_id, &response.content)?;
        Ok(RawResponse {
            request_digest: digest,
            model_id: self.config.model_id.clone(),
            content,
            latency_ms: started.elapsed().as_millis() as u64,
            attempt: response.attempt,
            from_cache: false,
        })
    }

    /// Classifies a whole corpus with at most `concurrency_limit` requests
    /// in flight. Output order matches corpus order; per-item failures are
    /// recorded without aborting the batch.
    pub fn classify_batch(
        &self,
        spec: &PromptSpec,
        corpus: &Corpus,
        cache: &ResponseCache,
    ) -> Vec<Result<RawResponse, GatewayError>> {
        let workers = self.config.concurrency_limit.max(1).min(corpus.len().max(1));
        let next = AtomicUsize::new(0);
        let results: Vec<Mutex<Option<Result<RawResponse, GatewayError>>>> =
            (0..corpus.len()).map(|_| Mutex::new(None)).collect();

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= corpus.len() {
                        break;
                    }
                    let outcome = self.classify_one(spec, &corpus.comments[i], cache);
                    *results[i].lock().unwrap() = Some(outcome);
                });
            }
        });

        results
            .into_iter()
            .map(|slot| slot.into_inner().unwrap().expect("every slot filled"))
            .collect()
    }
}

/// Opens a recorded session file as a replay store.
pub fn record_replay(path: impl AsRef<Path>) -> Result<ResponseCache, GatewayError> {
    ResponseCache::load_replay(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::promptkit::bundled_spec;
    use crate::taxonomy::Taxonomy;

    fn comment(id: &str, text: &str) -> LabeledComment {
        LabeledComment {
            id: id.into(),
            text: text.into(),
            gold: crate::taxonomy::Category::Neutral,
            source: crate::corpus::CommentSource::SyntheticFixture,
        }
    }

    fn small_corpus(n: usize) -> Corpus {
        Corpus {
            comments: (0..n)
                .map(|i| comment(&format!("c{i}"), &format!("comment number {i}")))
                .collect(),
            seed: None,
        }
    }

    fn scripted_for(corpus: &Corpus) -> HashMap<String, String> {
        corpus
            .comments
            .iter()
            .map(|c| {
                (
                    c.id.clone(),
                    format!("label: Neutral; confidence: 0.99; reason: fixture {}.", c.id),
                )
            })
            .collect()
    }

    #[test]
    fn second_identical_call_hits_cache() {
        let tax = Taxonomy::bundled();
        let spec = bundled_spec("P00", &tax).unwrap();
        let corpus = small_corpus(1);
        let config = ModelConfig::offline(ProviderKind::Scripted, "test-model");
        let cache = ResponseCache::in_memory();

        let provider = std::sync::Arc::new(ScriptedProvider::new(scripted_for(&corpus)));
        let gw = Gateway::new(config, Box::new(provider.clone())).unwrap();
        let first = gw.classify_one(&spec, &corpus.comments[0], &cache).unwrap();
        assert!(!first.from_cache);
        assert_eq!(provider.calls(), 1);

        let second = gw.classify_one(&spec, &corpus.comments[0], &cache).unwrap();
        assert!(second.from_cache);
        assert_eq!(second.content, first.content);
        assert_eq!(provider.calls(), 1, "cache hit must not reach the provider");
    }

    #[test]
    fn scripted_provider_counts_calls() {
        let tax = Taxonomy::bundled();
        let spec = bundled_spec("P00", &tax).unwrap();
        let corpus = small_corpus(3);
        let provider = ScriptedProvider::new(scripted_for(&corpus));
        let config = ModelConfig::offline(ProviderKind::Scripted, "test-model");
        let cache = ResponseCache::in_memory();

        for c in &corpus.comments {
            let system = render_system(&spec);
            let user = render_user(&spec, &c.text);
            let rendered = render_prompt(&spec, &c.text);
            let digest = request_digest(&config, &rendered);
            let req = PromptRequest {
                digest: &digest,
                comment_id: &c.id,
                system: &system,
                user: &user,
            };
            provider.complete(&config, &req).unwrap();
        }
        assert_eq!(provider.calls(), 3);
        let _ = cache;
    }

    #[test]
    fn batch_preserves_corpus_order_at_any_concurrency() {
        let tax = Taxonomy::bundled();
        let spec = bundled_spec("P01", &tax).unwrap();
        let corpus = small_corpus(25);
        let responses = scripted_for(&corpus);

        let run = |limit: usize| -> Vec<String> {
            let mut config = ModelConfig::offline(ProviderKind::Scripted, "test-model");
            config.concurrency_limit = limit;
            let gw = Gateway::scripted(config, responses.clone()).unwrap();
            let cache = ResponseCache::in_memory();
            gw.classify_batch(&spec, &corpus, &cache)
                .into_iter()
                .map(|r| r.unwrap().content)
                .collect()
        };

        let sequential = run(1);
        let concurrent = run(8);
        assert_eq!(sequential, concurrent);
        assert!(sequential[7].contains("fixture c7"));
    }

    #[test]
    fn batch_records_per_item_failures() {
        let tax = Taxonomy::bundled();
        let spec = bundled_spec("P00", &tax).unwrap();
        let corpus = small_corpus(3);
        let mut responses = scripted_for(&corpus);
        responses.remove("c1");
        let gw = Gateway::scripted(
            ModelConfig::offline(ProviderKind::Scripted, "test-model"),
            responses,
        )
        .unwrap();
        let cache = ResponseCache::in_memory();
        let results = gw.classify_batch(&spec, &corpus, &cache);
        assert!(results[0].is_ok());
        assert!(results[1].is_err());
        assert!(results[2].is_ok());
    }

    #[test]
    fn empty_corpus_gives_empty_batch() {
        let tax = Taxonomy::bundled();
        let spec = bundled_spec("P00", &tax).unwrap();
        let gw = Gateway::scripted(
            ModelConfig::offline(ProviderKind::Scripted, "test-model"),
            HashMap::new(),
        )
        .unwrap();
        let cache = ResponseCache::in_memory();
        let results = gw.classify_batch(&spec, &small_corpus(0), &cache);
        assert!(results.is_empty());
    }

    #[test]
    fn replay_miss_identifies_comment() {
        let tax = Taxonomy::bundled();
        let spec = bundled_spec("P00", &tax).unwrap();
        let corpus = small_corpus(1);
        let gw = Gateway::replay(
            ModelConfig::offline(ProviderKind::Replay, "test-model"),
            ResponseCache::in_memory(),
        )
        .unwrap();
        let cache = ResponseCache::in_memory();
        let err = gw
            .classify_one(&spec, &corpus.comments[0], &cache)
            .unwrap_err();
        match err {
            GatewayError::ReplayMiss { comment_id, .. } => assert_eq!(comment_id, "c0"),
            other => panic!("expected ReplayMiss, got {other:?}"),
        }
    }

    #[test]
    fn record_then_replay_reproduces_contents() {
        let tax = Taxonomy::bundled();
        let spec = bundled_spec("P00", &tax).unwrap();
        let corpus = small_corpus(4);
        let dir = tempfile::tempdir().unwrap();
        let cache_path = dir.path().join("session.jsonl");

        // record with scripted provider into a file-backed cache
        let gw = Gateway::scripted(
            ModelConfig::offline(ProviderKind::Scripted, "test-model"),
            scripted_for(&corpus),
        )
        .unwrap();
        let cache = ResponseCache::open(&cache_path).unwrap();
        let recorded: Vec<RawResponse> = gw
            .classify_batch(&spec, &corpus, &cache)
            .into_iter()
            .map(|r| r.unwrap())
            .collect();

        // replay from the recorded file, no scripted provider
        let store = record_replay(&cache_path).unwrap();
        let gw = Gateway::replay(
            ModelConfig::offline(ProviderKind::Replay, "test-model"),
            store,
        )
        .unwrap();
        let fresh = ResponseCache::in_memory();
        let replayed: Vec<RawResponse> = gw
            .classify_batch(&spec, &corpus, &fresh)
            .into_iter()
            .map(|r| r.unwrap())
            .collect();

        for (a, b) in recorded.iter().zip(&replayed) {
            assert_eq!(a.content, b.content);
            assert_eq!(a.request_digest, b.request_digest);
        }
    }

    #[test]
    fn resumed_run_dispatches_only_uncached_items() {
        let tax = Taxonomy::bundled();
        let spec = bundled_spec("P00", &tax).unwrap();
        let corpus = small_corpus(6);
        let dir = tempfile::tempdir().unwrap();
        let cache_path = dir.path().join("cache.jsonl");

        // first (interrupted) run covers the first half
        let half = Corpus {
            comments: corpus.comments[..3].to_vec(),
            seed: None,
        };
        let gw = Gateway::scripted(
            ModelConfig::offline(ProviderKind::Scripted, "test-model"),
            scripted_for(&corpus),
        )
        .unwrap();
        let cache = ResponseCache::open(&cache_path).unwrap();
        for r in gw.classify_batch(&spec, &half, &cache) {
            r.unwrap();
        }
        drop(cache);

        // resume over the full corpus with a call-counting provider
        let provider = std::sync::Arc::new(ScriptedProvider::new(scripted_for(&corpus)));
        let gw = Gateway::new(
            ModelConfig::offline(ProviderKind::Scripted, "test-model"),
            Box::new(provider.clone()),
        )
        .unwrap();
        let cache = ResponseCache::open(&cache_path).unwrap();
        let results = gw.classify_batch(&spec, &corpus, &cache);
        let cached = results
            .iter()
            .filter(|r| r.as_ref().unwrap().from_cache)
            .count();
        assert_eq!(cached, 3);
        assert_eq!(provider.calls(), 3, "only uncached items reach the provider");
    }

    #[test]
    fn config_validation_rejects_bad_parameters() {
        let mut config = ModelConfig::offline(ProviderKind::Scripted, "m");
        config.top_p = 0.0;
        assert!(config.validate().is_err());
        config.top_p = 0.9;
        config.temperature = -0.5;
        assert!(config.validate().is_err());
        config.temperature = 0.0; // deterministic setting is allowed
        assert!(config.validate().is_ok());
    }

    #[test]
    fn live_provider_retries_throttling_then_succeeds() {
        use std::io::Read;
        use std::net::TcpListener;

        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();

        let server = std::thread::spawn(move || {
            let responses = [
                "HTTP/1.1 429 Too Many Requests\r\ncontent-length: 0\r\n\r\n".to_string(),
                "HTTP/1.1 429 Too Many Requests\r\ncontent-length: 0\r\n\r\n".to_string(),
                {
                    let body = r#"{"choices":[{"message":{"content":"label: Neutral; confidence: 0.99; reason: stub."}}]}"#;
                    format!(
                        "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{}",
                        body.len(),
                        body
                    )
                },
            ];
            for response in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = [0u8; 65536];
                // read until end of headers plus body; single read is
                // enough for these small requests in practice, so drain
                // with a short loop
                let mut data = Vec::new();
                loop {
                    let n = stream.read(&mut buf).unwrap();
                    data.extend_from_slice(&buf[..n]);
                    if let Some(pos) = find_subslice(&data, b"\r\n\r\n") {
                        let headers = String::from_utf8_lossy(&data[..pos]).to_lowercase();
                        let content_length = headers
                            .lines()
                            .find_map(|l| l.strip_prefix("content-length:"))
                            .and_then(|v| v.trim().parse::<usize>().ok())
                            .unwrap_or(0);
                        if data.len() >= pos + 4 + content_length {
                            break;
                        }
                    }
                    if n == 0 {
                        break;
                    }
                }
                use std::io::Write;
                stream.write_all(response.as_bytes()).unwrap();
            }
        });

        fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
            haystack
                .windows(needle.len())
                .position(|window| window == needle)
        }

        let tax = Taxonomy::bundled();
        let spec = bundled_spec("P00", &tax).unwrap();
        let mut config = ModelConfig::offline(ProviderKind::LiveHttp, "stub-model");
        config.endpoint = Some(format!("http://{addr}/v1/chat/completions"));
        config.max_retries = 3;

        std::env::set_var(API_KEY_ENV, "test-key-not-a-secret");
        let provider = LiveProvider::from_env(Duration::from_secs(5)).unwrap();
        let gw = Gateway::new(config, Box::new(provider)).unwrap();
        let cache = ResponseCache::in_memory();
        let response = gw
            .classify_one(&spec, &comment("c0", "hello world"), &cache)
            .unwrap();
        assert_eq!(response.attempt, 3);
        assert!(response.content.contains("Neutral"));
        server.join().unwrap();
    }
}
