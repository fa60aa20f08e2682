//! Remote clients speaking an OpenAI-compatible wire shape, with bounded
//! in-flight concurrency and retry on transient failures.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{ChatClient, ChatRequest, EmbedClient, EmbeddingVector, Role, SearchClient, SearchHit};
use crate::error::{Error, Result};

/// Counting semaphore bounding concurrent outbound requests.
pub struct Gate {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    pub fn new(permits: usize) -> Self {
        Gate {
            permits: Mutex::new(permits),
            cv: Condvar::new(),
        }
    }

    fn acquire(self: &Arc<Self>) -> GateGuard {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        GateGuard { gate: self.clone() }
    }
}

struct GateGuard {
    gate: Arc<Gate>,
}

impl Drop for GateGuard {
    fn drop(&mut self) {
        let mut p = self.gate.permits.lock().unwrap();
        *p += 1;
        self.gate.cv.notify_one();
    }
}

/// Retry on transport failures and 429/5xx, with exponential backoff.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_initial_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_initial_ms: 250,
        }
    }
}

fn retryable_status(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

/// POST `body` to `url`, returning the response body on 2xx.
fn post_with_retry(
    client: &reqwest::blocking::Client,
    url: &str,
    api_key: &Option<String>,
    policy: RetryPolicy,
    gate: &Arc<Gate>,
    body: &serde_json::Value,
) -> Result<String> {
    let mut last_err: Option<Error> = None;
    for attempt in 1..=policy.max_attempts {
        if attempt > 1 {
            let backoff = policy.backoff_initial_ms.saturating_mul(1 << (attempt - 2));
            std::thread::sleep(Duration::from_millis(backoff));
        }
        let _permit = gate.acquire();
        let mut req = client.post(url).json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        match req.send() {
            Err(e) => {
                last_err = Some(Error::Transport {
                    attempts: attempt,
                    reason: e.to_string(),
                });
            }
            Ok(resp) => {
                let status = resp.status().as_u16();
                let text = resp.text().unwrap_or_default();
                if (200..300).contains(&status) {
                    return Ok(text);
                }
                let err = Error::Protocol { status, body: text };
                if retryable_status(status) {
                    last_err = Some(err);
                } else {
                    return Err(err);
                }
            }
        }
    }
    Err(last_err.unwrap_or(Error::Transport {
        attempts: policy.max_attempts,
        reason: "no attempt was made".into(),
    }))
}

fn role_str(role: Role) -> &'static str {
    match role {
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    }
}

pub struct HttpChat {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    policy: RetryPolicy,
    gate: Arc<Gate>,
    client: reqwest::blocking::Client,
}

impl HttpChat {
    pub fn new(
        endpoint: String,
        model: String,
        api_key: Option<String>,
        policy: RetryPolicy,
        gate: Arc<Gate>,
    ) -> Self {
        HttpChat {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model,
            api_key,
            policy,
            gate,
            client: default_client(),
        }
    }
}

fn default_client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(120))
        .build()
        .expect("client build")
}

#[derive(Deserialize)]
struct ChatCompletionReply {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

impl ChatClient for HttpChat {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let mut messages = vec![json!({"role": "system", "content": request.system_prompt})];
        for m in &request.messages {
            messages.push(json!({"role": role_str(m.role), "content": m.content}));
        }
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let url = format!("{}/chat/completions", self.endpoint);
        let text = post_with_retry(
            &self.client,
            &url,
            &self.api_key,
            self.policy,
            &self.gate,
            &body,
        )?;
        let reply: ChatCompletionReply = serde_json::from_str(&text).map_err(|e| {
            Error::Protocol {
                status: 200,
                body: format!("unexpected completion shape: {e}"),
            }
        })?;
        reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or(Error::Protocol {
                status: 200,
                body: "completion reply carried no content".into(),
            })
    }
}

pub struct HttpEmbed {
    endpoint: String,
    model: String,
    dim: usize,
    api_key: Option<String>,
    policy: RetryPolicy,
    gate: Arc<Gate>,
    client: reqwest::blocking::Client,
}

impl HttpEmbed {
    pub fn new(
        endpoint: String,
        model: String,
        dim: usize,
        api_key: Option<String>,
        policy: RetryPolicy,
        gate: Arc<Gate>,
    ) -> Self {
        HttpEmbed {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model,
            dim,
            api_key,
            policy,
            gate,
            client: default_client(),
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingReply {
    data: Vec<EmbeddingRow>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    index: usize,
    embedding: Vec<f64>,
}

impl EmbedClient for HttpEmbed {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({"model": self.model, "input": texts});
        let url = format!("{}/embeddings", self.endpoint);
        let text = post_with_retry(
            &self.client,
            &url,
            &self.api_key,
            self.policy,
            &self.gate,
            &body,
        )?;
        let reply: EmbeddingReply =
            serde_json::from_str(&text).map_err(|e| Error::Protocol {
                status: 200,
                body: format!("unexpected embedding shape: {e}"),
            })?;
        if reply.data.len() != texts.len() {
            return Err(Error::Protocol {
                status: 200,
                body: format!(
                    "asked for {} embeddings, got {}",
                    texts.len(),
                    reply.data.len()
                ),
            });
        }
        let mut rows = reply.data;
        rows.sort_by_key(|r| r.index);
        rows.into_iter()
            .map(|r| {
                if r.embedding.len() != self.dim {
                    return Err(Error::Protocol {
                        status: 200,
                        body: format!(
                            "backend dim {} != configured dim {}",
                            r.embedding.len(),
                            self.dim
                        ),
                    });
                }
                if r.embedding.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Protocol {
                        status: 200,
                        body: "non-finite embedding entry".into(),
                    });
                }
                Ok(EmbeddingVector { values: r.embedding })
            })
            .collect()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("http:{}:{}", self.model, self.dim)
    }
}

pub struct HttpSearch {
    endpoint: String,
    policy: RetryPolicy,
    gate: Arc<Gate>,
    client: reqwest::blocking::Client,
}

impl HttpSearch {
    pub fn new(endpoint: String, policy: RetryPolicy, gate: Arc<Gate>) -> Self {
        HttpSearch {
            endpoint,
            policy,
            gate,
            client: default_client(),
        }
    }
}

#[derive(Deserialize)]
struct SearchReply {
    hits: Vec<SearchHit>,
}

impl SearchClient for HttpSearch {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<SearchHit>> {
        if top_k == 0 {
            return Err(Error::Contract("top_k must be >= 1".into()));
        }
        let body = json!({"query": query, "top_k": top_k});
        let text = post_with_retry(
            &self.client,
            &self.endpoint,
            &None,
            self.policy,
            &self.gate,
            &body,
        )?;
        let reply: SearchReply = serde_json::from_str(&text).map_err(|e| Error::Protocol {
            status: 200,
            body: format!("unexpected search shape: {e}"),
        })?;
        let mut hits = reply.hits;
        hits.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        hits.truncate(top_k);
        Ok(hits)
    }
}
