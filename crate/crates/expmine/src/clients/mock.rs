//! Deterministic offline clients.
//!
//! Every mock is a pure function of (configuration, input): repeated calls
//! are bit-identical, which makes golden-file tests possible for every
//! downstream stage and full pipeline runs reproducible.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatClient, ChatRequest, EmbedClient, EmbeddingVector, Role, SearchClient, SearchHit};
use crate::error::{Error, Result};
use crate::par;
use crate::vecmath;

pub(crate) fn hash64(seed: u64, text: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(text.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Deterministic unit-norm vector for (seed, text): a keyed hash seeds a
/// stream cipher RNG, which is expanded to `dim` reals and L2-normalized.
pub fn mock_embedder(text: &str, dim: usize, seed: u64) -> EmbeddingVector {
    assert!(dim >= 2, "mock_embedder requires dim >= 2");
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(text.as_bytes());
    let key: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha20Rng::from_seed(key);
    let mut values: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
    vecmath::normalize(&mut values);
    EmbeddingVector { values }
}

fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

/// Offline embedding client. A text embeds as the normalized sum of its
/// tokens' keyed-hash vectors, so lexically overlapping texts land close in
/// the space while unrelated texts stay near-orthogonal.
pub struct MockEmbed {
    model: String,
    dim: usize,
    seed: u64,
}

impl MockEmbed {
    pub fn new(model: impl Into<String>, dim: usize, seed: u64) -> Self {
        assert!(dim >= 2);
        MockEmbed {
            model: model.into(),
            dim,
            seed,
        }
    }

    fn embed_text(&self, text: &str) -> EmbeddingVector {
        let toks = tokens(text);
        if toks.is_empty() {
            return mock_embedder(text, self.dim, self.seed);
        }
        let mut sum = vec![0.0f64; self.dim];
        for t in &toks {
            let v = mock_embedder(t, self.dim, self.seed);
            for (s, x) in sum.iter_mut().zip(&v.values) {
                *s += x;
            }
        }
        vecmath::normalize(&mut sum);
        EmbeddingVector { values: sum }
    }
}

impl EmbedClient for MockEmbed {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        Ok(par::map_ordered(texts, |t| self.embed_text(t)))
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("mock:{}:{}:{}", self.model, self.dim, self.seed)
    }
}

// ---------------------------------------------------------------------------
// Chat mock
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum MockChatMode {
    /// Always the same reply.
    Canned(String),
    /// Reply indexed by the number of tool messages accumulated so far
    /// (clamped to the last entry), i.e. by episode turn.
    Scripted(Vec<String>),
    /// Reply drawn from a pool by hash of the full rendered prompt.
    Hashed { seed: u64, pool: Vec<String> },
    /// A synthetic policy: answers reflection, clustering, and judge prompts
    /// with well-formed structured replies, and plays a search agent on
    /// everything else (one search, then a boxed answer copied from the tool
    /// response, corrupted on a seed-dependent coin flip).
    Agent { seed: u64 },
}

pub struct MockChat {
    mode: MockChatMode,
}

impl MockChat {
    pub fn new(mode: MockChatMode) -> Self {
        MockChat { mode }
    }

    pub fn canned(reply: impl Into<String>) -> Self {
        Self::new(MockChatMode::Canned(reply.into()))
    }

    pub fn scripted(replies: Vec<String>) -> Self {
        assert!(!replies.is_empty());
        Self::new(MockChatMode::Scripted(replies))
    }

    pub fn agent(seed: u64) -> Self {
        Self::new(MockChatMode::Agent { seed })
    }
}

fn rendered_prompt(req: &ChatRequest) -> String {
    let mut s = req.system_prompt.clone();
    for m in &req.messages {
        s.push('\n');
        s.push_str(match m.role {
            Role::User => "[user] ",
            Role::Assistant => "[assistant] ",
            Role::Tool => "[tool] ",
        });
        s.push_str(&m.content);
    }
    s
}

fn first_line_after(haystack: &str, marker: &str) -> Option<String> {
    let at = haystack.find(marker)? + marker.len();
    haystack[at..]
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(String::from)
}

/// Scan for `"key": "value"` occurrences and collect the values, honoring
/// backslash escapes. Good enough for the synthetic mock, which only needs
/// to read back values it knows were serialized with serde.
fn scan_string_values(text: &str, key: &str) -> Vec<String> {
    let needle = format!("\"{key}\":");
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(pos) = rest.find(&needle) {
        rest = &rest[pos + needle.len()..];
        let trimmed = rest.trim_start();
        if let Some(stripped) = trimmed.strip_prefix('"') {
            let mut value = String::new();
            let mut chars = stripped.chars();
            let mut escaped = false;
            for c in chars.by_ref() {
                if escaped {
                    value.push(c);
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == '"' {
                    break;
                } else {
                    value.push(c);
                }
            }
            out.push(value);
        }
    }
    out
}

impl MockChat {
    fn agent_reply(&self, seed: u64, req: &ChatRequest) -> String {
        let prompt = rendered_prompt(req);

        // Reflection prompt: emit one structured experience object.
        if prompt.contains("extract generalizable experiences") {
            let question = first_line_after(&prompt, "Question:")
                .unwrap_or_else(|| "the question".into());
            let reply = serde_json::json!({
                "type": "multi-hop qa / targeted search",
                "title": format!("Evidence-first answering: {question}"),
                "tags": ["search", "grounding", "verification"],
                "description": "Successful attempts issued one focused query per missing fact and answered only after the fact appeared in a tool response; failed attempts guessed without retrieved support.",
                "thinking": "Winning traces kept queries close to the question wording and copied the answer span verbatim; losing traces answered before evidence arrived.",
            });
            return serde_json::to_string_pretty(&reply).unwrap();
        }

        // Clustering prompt: one generalized entry covering every member id.
        if prompt.contains("cluster the similar experiences") {
            let ids = scan_string_values(&prompt, "id");
            let first_title = scan_string_values(&prompt, "title")
                .into_iter()
                .next()
                .unwrap_or_else(|| "the member experiences".into());
            let reply = serde_json::json!([{
                "ids": ids,
                "type": "generalized search strategy",
                "title": format!("Shared pattern: {first_title}"),
                "tags": ["strategy", "decomposition"],
                "description": "Across this cluster the winning pattern is the same: decompose the question, retrieve one fact per sub-step, and keep the final answer grounded in retrieved text.",
                "thinking": "Members differ in surface topic but share the decompose-retrieve-verify loop.",
            }]);
            return serde_json::to_string_pretty(&reply).unwrap();
        }

        // Judge prompt: a bare score.
        if prompt.contains("output only the score between 0 and 5") {
            return format!("{}", hash64(seed, &prompt) % 6);
        }

        // Otherwise play the search agent.
        let question = req
            .messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.lines().next().unwrap_or("").trim().to_string())
            .unwrap_or_default();
        let last_tool = req
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::Tool)
            .map(|m| m.content.as_str());

        match last_tool {
            None => {
                let call = serde_json::json!({
                    "name": "search",
                    "arguments": { "query": question },
                });
                format!(
                    "<think>I should retrieve evidence before answering.</think>\n<tool_call>\n{}\n</tool_call>",
                    serde_json::to_string(&call).unwrap()
                )
            }
            Some(tool_text) => {
                let found = tool_text.find("answer: ").map(|at| {
                    let rest = &tool_text[at + "answer: ".len()..];
                    let end = rest.find(['.', '\n']).unwrap_or(rest.len());
                    rest[..end].trim().to_string()
                });
                let wrong = hash64(seed, &format!("{question}|{:?}", req.seed)) & 1 == 1;
                match found {
                    Some(ans) if !wrong && !ans.is_empty() => format!(
                        "<think>The retrieved passage states the fact directly.</think> Based on the passage, the answer is \\boxed{{{ans}}}"
                    ),
                    _ => "<think>The sources are inconclusive, so I will commit to my best guess.</think> My best guess is \\boxed{unverified}".to_string(),
                }
            }
        }
    }
}

impl ChatClient for MockChat {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        match &self.mode {
            MockChatMode::Canned(reply) => Ok(reply.clone()),
            MockChatMode::Scripted(replies) => {
                let turn = request
                    .messages
                    .iter()
                    .filter(|m| m.role == Role::Tool)
                    .count();
                Ok(replies[turn.min(replies.len() - 1)].clone())
            }
            MockChatMode::Hashed { seed, pool } => {
                if pool.is_empty() {
                    return Err(Error::Config("hashed mock needs a non-empty pool".into()));
                }
                let idx = hash64(*seed, &rendered_prompt(request)) as usize % pool.len();
                Ok(pool[idx].clone())
            }
            MockChatMode::Agent { seed } => Ok(self.agent_reply(*seed, request)),
        }
    }
}

// ---------------------------------------------------------------------------
// Fixture-backed search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureDoc {
    pub doc_id: String,
    pub text: String,
}

/// Offline document search over a small fixture corpus. Scores are the
/// fraction of distinct query tokens present in the document; zero-score
/// documents are never returned.
pub struct FixtureSearch {
    docs: Vec<FixtureDoc>,
}

impl FixtureSearch {
    pub fn new(docs: Vec<FixtureDoc>) -> Self {
        FixtureSearch { docs }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let data = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut docs = Vec::new();
        for (idx, line) in data.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let doc: FixtureDoc = serde_json::from_str(line)
                .map_err(|e| Error::parse(idx + 1, format!("malformed fixture doc: {e}")))?;
            docs.push(doc);
        }
        Ok(FixtureSearch { docs })
    }
}

impl SearchClient for FixtureSearch {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<SearchHit>> {
        if top_k == 0 {
            return Err(Error::Contract("top_k must be >= 1".into()));
        }
        let q: BTreeSet<String> = tokens(query).into_iter().collect();
        if q.is_empty() {
            return Ok(Vec::new());
        }
        let mut hits: Vec<SearchHit> = self
            .docs
            .iter()
            .filter_map(|d| {
                let dt: BTreeSet<String> = tokens(&d.text).into_iter().collect();
                let overlap = q.intersection(&dt).count();
                if overlap == 0 {
                    None
                } else {
                    Some(SearchHit {
                        doc_id: d.doc_id.clone(),
                        text: d.text.clone(),
                        score: overlap as f64 / q.len() as f64,
                    })
                }
            })
            .collect();
        hits.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        hits.truncate(top_k);
        Ok(hits)
    }
}
