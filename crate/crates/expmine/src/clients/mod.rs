//! Pluggable chat, embedding, and document-search clients.
//!
//! Each client comes in two flavors: a remote implementation speaking an
//! OpenAI-compatible wire shape, and a deterministic offline mock. Mocks are
//! pure functions of (configuration, input), so every downstream stage can be
//! golden-file tested and whole pipeline runs are bit-reproducible.

mod http;
mod mock;

pub use http::{HttpChat, HttpEmbed, HttpSearch, RetryPolicy};
pub use mock::{mock_embedder, FixtureDoc, FixtureSearch, MockChat, MockChatMode, MockEmbed};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Sampling seed forwarded to the backend; distinct per rollout so the
    /// K episodes of one question are independent draws.
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, user: impl Into<String>) -> Self {
        ChatRequest {
            system_prompt: system_prompt.into(),
            messages: vec![ChatMessage {
                role: Role::User,
                content: user.into(),
            }],
            temperature: 0.0,
            max_tokens: 1024,
            seed: None,
        }
    }

    pub fn push(&mut self, role: Role, content: impl Into<String>) {
        self.messages.push(ChatMessage {
            role,
            content: content.into(),
        });
    }
}

/// Fixed-length dense embedding; serializes as a bare numeric array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub doc_id: String,
    pub text: String,
    pub score: f64,
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

pub trait EmbedClient: Send + Sync {
    /// One vector per input, order preserved, constant dimension.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;

    fn dim(&self) -> usize;

    /// Identifies the embedding space (model + dim + seed); stored with a
    /// built knowledge base and checked on load.
    fn fingerprint(&self) -> String;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        let mut v = self.embed(std::slice::from_ref(&text.to_string()))?;
        v.pop()
            .ok_or_else(|| Error::Contract("embed backend returned no vector".into()))
    }
}

pub trait SearchClient: Send + Sync {
    /// At most `top_k` hits, non-increasing by score, ties by ascending doc_id.
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<SearchHit>>;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

fn default_chat_mode() -> String {
    "mock".into()
}
fn default_dim() -> usize {
    256
}
fn default_max_inflight() -> usize {
    8
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    250
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatClientConfig {
    /// "mock" or "http".
    #[serde(default = "default_chat_mode")]
    pub mode: String,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ChatClientConfig {
    fn default() -> Self {
        ChatClientConfig {
            mode: default_chat_mode(),
            endpoint: String::new(),
            model: String::new(),
            api_key_env: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedClientConfig {
    #[serde(default = "default_chat_mode")]
    pub mode: String,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for EmbedClientConfig {
    fn default() -> Self {
        EmbedClientConfig {
            mode: default_chat_mode(),
            endpoint: String::new(),
            model: String::new(),
            dim: default_dim(),
            api_key_env: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SearchClientConfig {
    /// "fixture" or "http". Defaults to fixture when a fixture path is set.
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub fixture_path: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransportConfig {
    #[serde(default = "default_max_inflight")]
    pub max_inflight: usize,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            max_inflight: default_max_inflight(),
            max_retries: default_max_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

impl TransportConfig {
    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_retries.max(1),
            backoff_initial_ms: self.backoff_ms,
        }
    }
}

/// The three client handles a pipeline run needs.
#[derive(Clone)]
pub struct Clients {
    pub chat: Arc<dyn ChatClient>,
    pub embed: Arc<dyn EmbedClient>,
    pub search: Arc<dyn SearchClient>,
}

fn api_key_from_env(var: &Option<String>) -> Result<Option<String>> {
    match var {
        None => Ok(None),
        Some(name) => match std::env::var(name) {
            Ok(v) => Ok(Some(v)),
            Err(_) => Err(Error::Config(format!(
                "api_key_env names {name} but it is not set"
            ))),
        },
    }
}

pub fn build_chat_client(
    cfg: &ChatClientConfig,
    transport: &TransportConfig,
    gate: Arc<http::Gate>,
) -> Result<Arc<dyn ChatClient>> {
    match cfg.mode.as_str() {
        "mock" => Ok(Arc::new(MockChat::agent(cfg.seed))),
        "http" => {
            if cfg.endpoint.is_empty() {
                return Err(Error::Config("chat.endpoint required in http mode".into()));
            }
            Ok(Arc::new(HttpChat::new(
                cfg.endpoint.clone(),
                cfg.model.clone(),
                api_key_from_env(&cfg.api_key_env)?,
                transport.retry_policy(),
                gate,
            )))
        }
        other => Err(Error::Config(format!("unknown chat mode `{other}`"))),
    }
}

pub fn build_embed_client(
    cfg: &EmbedClientConfig,
    transport: &TransportConfig,
    gate: Arc<http::Gate>,
) -> Result<Arc<dyn EmbedClient>> {
    if cfg.dim < 2 {
        return Err(Error::Config("embed.dim must be >= 2".into()));
    }
    match cfg.mode.as_str() {
        "mock" => Ok(Arc::new(MockEmbed::new(
            cfg.model.clone(),
            cfg.dim,
            cfg.seed,
        ))),
        "http" => {
            if cfg.endpoint.is_empty() {
                return Err(Error::Config("embed.endpoint required in http mode".into()));
            }
            Ok(Arc::new(HttpEmbed::new(
                cfg.endpoint.clone(),
                cfg.model.clone(),
                cfg.dim,
                api_key_from_env(&cfg.api_key_env)?,
                transport.retry_policy(),
                gate,
            )))
        }
        other => Err(Error::Config(format!("unknown embed mode `{other}`"))),
    }
}

pub fn build_search_client(
    cfg: &SearchClientConfig,
    transport: &TransportConfig,
    gate: Arc<http::Gate>,
) -> Result<Arc<dyn SearchClient>> {
    let mode = cfg.mode.clone().unwrap_or_else(|| {
        if cfg.fixture_path.is_some() {
            "fixture".into()
        } else {
            "http".into()
        }
    });
    match mode.as_str() {
        "fixture" | "mock" => match &cfg.fixture_path {
            Some(path) => Ok(Arc::new(FixtureSearch::from_file(std::path::Path::new(
                path,
            ))?)),
            // no fixture: an empty corpus, every search comes back empty
            None => Ok(Arc::new(FixtureSearch::new(Vec::new()))),
        },
        "http" => {
            if cfg.endpoint.is_empty() {
                return Err(Error::Config(
                    "search.endpoint required in http mode".into(),
                ));
            }
            Ok(Arc::new(HttpSearch::new(
                cfg.endpoint.clone(),
                transport.retry_policy(),
                gate,
            )))
        }
        other => Err(Error::Config(format!("unknown search mode `{other}`"))),
    }
}

/// Build the full client set from configuration. All HTTP clients share one
/// in-flight gate so `client.max_inflight` bounds total concurrency.
pub fn build_clients(
    chat: &ChatClientConfig,
    embed: &EmbedClientConfig,
    search: &SearchClientConfig,
    transport: &TransportConfig,
) -> Result<Clients> {
    let gate = Arc::new(http::Gate::new(transport.max_inflight.max(1)));
    Ok(Clients {
        chat: build_chat_client(chat, transport, gate.clone())?,
        embed: build_embed_client(embed, transport, gate.clone())?,
        search: build_search_client(search, transport, gate)?,
    })
}

pub fn embed_fingerprint(cfg: &EmbedClientConfig) -> String {
    if cfg.mode == "mock" {
        format!("mock:{}:{}:{}", cfg.model, cfg.dim, cfg.seed)
    } else {
        format!("http:{}:{}", cfg.model, cfg.dim)
    }
}

/// Stable per-episode sampling seed for rollout (example, repeat) pairs.
pub fn episode_seed(base_seed: u64, example_index: usize, repeat_index: usize) -> u64 {
    mock::hash64(base_seed, &format!("{example_index}:{repeat_index}"))
}
