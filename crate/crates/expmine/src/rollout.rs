//! Experience-aligned agent episodes: prompt assembly, turn parsing, tool
//! dispatch, experience injection, answer extraction.
//!
//! Strategy experiences enter once, in the system prompt, before the first
//! turn. Case experiences enter mid-rollout: after each tool call the
//! current query is embedded and level-1 entries above the similarity
//! threshold ride along inside the same tool response. Everything the
//! environment supplies is marked `injected`, which downstream becomes the
//! loss mask.

use serde::{Deserialize, Serialize};

use crate::clients::{ChatRequest, Clients, Role};
use crate::error::{Error, Result};
use crate::experience::Experience;
use crate::grpo::{trajectory_reward, RewardSpec};
use crate::hek::{retrieve_cases, retrieve_strategies, RetrievalIndex};
use crate::par;
use crate::templates;
use crate::trajectory::{extract_boxed, QAExample, RolloutGroup, Segment, Trajectory};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutConfig {
    #[serde(default = "default_max_turns")]
    pub max_turns: u32,
    #[serde(default = "default_max_response_chars")]
    pub max_response_chars: usize,
    /// Similarity floor for mid-rollout case injection.
    #[serde(default = "default_case_threshold")]
    pub case_threshold: f64,
    #[serde(default = "default_case_top_k")]
    pub case_top_k: usize,
    /// Strategy level rendered into the system prompt (2 or 3).
    #[serde(default = "default_strategy_level")]
    pub strategy_level: u32,
    #[serde(default = "default_strategy_top_k")]
    pub strategy_top_k: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_inject_mid_rollout")]
    pub inject_mid_rollout: bool,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Hits requested from the search tool when the call does not say.
    #[serde(default = "default_search_top_k")]
    pub search_top_k: usize,
}

fn default_max_turns() -> u32 {
    6
}
fn default_max_response_chars() -> usize {
    4000
}
fn default_case_threshold() -> f64 {
    0.8
}
fn default_case_top_k() -> usize {
    3
}
fn default_strategy_level() -> u32 {
    2
}
fn default_strategy_top_k() -> usize {
    5
}
fn default_temperature() -> f64 {
    1.0
}
fn default_inject_mid_rollout() -> bool {
    true
}
fn default_max_tokens() -> u32 {
    1024
}
fn default_search_top_k() -> usize {
    3
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            max_turns: default_max_turns(),
            max_response_chars: default_max_response_chars(),
            case_threshold: default_case_threshold(),
            case_top_k: default_case_top_k(),
            strategy_level: default_strategy_level(),
            strategy_top_k: default_strategy_top_k(),
            temperature: default_temperature(),
            inject_mid_rollout: default_inject_mid_rollout(),
            max_tokens: default_max_tokens(),
            search_top_k: default_search_top_k(),
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_turns < 1 {
            return Err(Error::Config("rollout.max_turns must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.case_threshold) {
            return Err(Error::Config(
                "rollout.case_threshold must lie in [0, 1]".into(),
            ));
        }
        if self.case_top_k < 1 || self.strategy_top_k < 1 || self.search_top_k < 1 {
            return Err(Error::Config("rollout top_k values must be >= 1".into()));
        }
        if self.strategy_level < 2 {
            return Err(Error::Config("rollout.strategy_level must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TurnEvent {
    Think(String),
    ToolCall {
        name: String,
        arguments: serde_json::Map<String, serde_json::Value>,
    },
    FinalAnswer(String),
    Malformed(String),
}

/// Scan a model turn for `<think>…</think>`, `<tool_call>…</tool_call>`,
/// and `\boxed{…}` spans, in textual order. Total: malformed spans become
/// `Malformed` events, text outside tags is ignored, and any input yields an
/// event list.
pub fn parse_turn(model_text: &str) -> Vec<TurnEvent> {
    const THINK_OPEN: &str = "<think>";
    const THINK_CLOSE: &str = "</think>";
    const CALL_OPEN: &str = "<tool_call>";
    const CALL_CLOSE: &str = "</tool_call>";
    const BOXED: &str = "\\boxed{";

    let mut events = Vec::new();
    let mut rest = model_text;
    loop {
        let next = [
            (rest.find(THINK_OPEN), 0usize),
            (rest.find(CALL_OPEN), 1),
            (rest.find(BOXED), 2),
        ]
        .into_iter()
        .filter_map(|(pos, kind)| pos.map(|p| (p, kind)))
        .min();
        let Some((pos, kind)) = next else { break };
        let tail = &rest[pos..];
        match kind {
            0 => match tail[THINK_OPEN.len()..].find(THINK_CLOSE) {
                Some(end) => {
                    let body = &tail[THINK_OPEN.len()..THINK_OPEN.len() + end];
                    events.push(TurnEvent::Think(body.trim().to_string()));
                    rest = &tail[THINK_OPEN.len() + end + THINK_CLOSE.len()..];
                }
                None => {
                    events.push(TurnEvent::Malformed("unclosed think tag".into()));
                    rest = &tail[THINK_OPEN.len()..];
                }
            },
            1 => match tail[CALL_OPEN.len()..].find(CALL_CLOSE) {
                Some(end) => {
                    let body = tail[CALL_OPEN.len()..CALL_OPEN.len() + end].trim();
                    events.push(parse_tool_call(body));
                    rest = &tail[CALL_OPEN.len() + end + CALL_CLOSE.len()..];
                }
                None => {
                    events.push(TurnEvent::Malformed("unclosed tool_call tag".into()));
                    rest = &tail[CALL_OPEN.len()..];
                }
            },
            _ => match extract_boxed(tail) {
                Some(answer) => {
                    let answer = answer.trim();
                    if answer.is_empty() {
                        events.push(TurnEvent::Malformed("empty boxed answer".into()));
                    } else {
                        events.push(TurnEvent::FinalAnswer(answer.to_string()));
                    }
                    // skip past the span: marker + content + closing brace
                    let consumed = tail.find('{').unwrap() + 1;
                    let inner_len = extract_boxed(tail).map(str::len).unwrap_or(0);
                    rest = &tail[consumed + inner_len + 1..];
                }
                None => {
                    events.push(TurnEvent::Malformed("unbalanced boxed span".into()));
                    rest = &tail[BOXED.len()..];
                }
            },
        }
    }
    events
}

fn parse_tool_call(body: &str) -> TurnEvent {
    let parsed: std::result::Result<serde_json::Value, _> = serde_json::from_str(body);
    let Ok(value) = parsed else {
        return TurnEvent::Malformed("invalid tool_call body".into());
    };
    let Some(obj) = value.as_object() else {
        return TurnEvent::Malformed("tool_call body is not an object".into());
    };
    let Some(name) = obj.get("name").and_then(|n| n.as_str()) else {
        return TurnEvent::Malformed("tool_call missing string `name`".into());
    };
    let Some(arguments) = obj.get("arguments").and_then(|a| a.as_object()) else {
        return TurnEvent::Malformed("tool_call missing object `arguments`".into());
    };
    TurnEvent::ToolCall {
        name: name.to_string(),
        arguments: arguments.clone(),
    }
}

/// Fill the system template's function-schema and experience slots. With no
/// strategies the experience block reads "None.".
pub fn render_system_prompt(tool_schemas: &str, strategies: &[&Experience]) -> String {
    let experience = if strategies.is_empty() {
        "None.".to_string()
    } else {
        strategies
            .iter()
            .enumerate()
            .map(|(i, e)| format!("{}. {}: {}", i + 1, e.title, e.description))
            .collect::<Vec<_>>()
            .join("\n")
    };
    templates::render(
        templates::SYSTEM_PROMPT,
        &[("func_schemas", tool_schemas), ("experience", &experience)],
    )
}

/// One finished episode plus its injection log.
#[derive(Debug, Clone)]
pub struct Episode {
    pub trajectory: Trajectory,
    /// (experience id, similarity) per injected case experience.
    pub case_injections: Vec<(String, f64)>,
    pub system_prompt: String,
}

fn truncate_chars(s: &str, budget: usize) -> String {
    if s.chars().count() <= budget {
        return s.to_string();
    }
    let cut = s.char_indices().nth(budget).map(|(i, _)| i).unwrap();
    format!("{}…[truncated]", &s[..cut])
}

fn format_hits(hits: &[crate::clients::SearchHit]) -> String {
    if hits.is_empty() {
        return "No results found.".to_string();
    }
    hits.iter()
        .enumerate()
        .map(|(i, h)| format!("[{}] ({}) {}", i + 1, h.doc_id, h.text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn format_cases(cases: &[(&Experience, f64)]) -> String {
    let mut out = String::from("Relevant experience:");
    for (i, (e, _)) in cases.iter().enumerate() {
        out.push_str(&format!("\n{}. {}: {}", i + 1, e.title, e.description));
    }
    out
}

/// Run one episode. With an index present, strategies are fetched for the
/// question and rendered into the system prompt, and (when enabled) case
/// experiences above the threshold are appended inside each tool response.
/// Exhausting the turn budget leaves `final_answer` absent with reward 0;
/// tool failures become error notices in the tool response and the loop
/// continues.
pub fn run_episode(
    example: &QAExample,
    index: Option<&RetrievalIndex>,
    clients: &Clients,
    config: &RolloutConfig,
    reward: &RewardSpec,
    seed: u64,
) -> Result<Episode> {
    config.validate()?;

    let strategies: Vec<(Experience, f64)> = match index {
        None => Vec::new(),
        Some(idx) => {
            let q_vec = clients.embed.embed_one(&example.question)?;
            match retrieve_strategies(idx, &q_vec, config.strategy_level, config.strategy_top_k) {
                Ok(hits) => hits
                    .into_iter()
                    .map(|(e, s)| (e.clone(), s))
                    .collect(),
                Err(Error::NotFound(_)) => {
                    log::warn!(
                        "base has no level {}; running without strategies",
                        config.strategy_level
                    );
                    Vec::new()
                }
                Err(e) => return Err(e),
            }
        }
    };
    let strategy_refs: Vec<&Experience> = strategies.iter().map(|(e, _)| e).collect();
    let system_prompt = render_system_prompt(templates::SEARCH_TOOL_SCHEMA, &strategy_refs);

    let mut request = ChatRequest {
        system_prompt: system_prompt.clone(),
        messages: vec![crate::clients::ChatMessage {
            role: Role::User,
            content: example.question.clone(),
        }],
        temperature: config.temperature,
        max_tokens: config.max_tokens,
        seed: Some(seed),
    };

    let mut segments: Vec<Segment> = Vec::new();
    let mut case_injections: Vec<(String, f64)> = Vec::new();
    let mut final_answer: Option<String> = None;
    let mut saw_tool_call = false;

    'turns: for _ in 0..config.max_turns {
        let model_text = clients.chat.complete(&request)?;
        request.push(Role::Assistant, model_text.clone());
        let events = parse_turn(&model_text);
        let mut progressed = false;

        for event in events {
            match event {
                TurnEvent::Think(text) => {
                    segments.push(Segment::think(text));
                }
                TurnEvent::ToolCall { name, arguments } => {
                    saw_tool_call = true;
                    progressed = true;
                    let call_text = serde_json::to_string(&serde_json::json!({
                        "name": name,
                        "arguments": arguments,
                    }))?;
                    segments.push(Segment::tool_call(call_text));

                    let query = arguments.get("query").and_then(|q| q.as_str());
                    let mut body = if name != "search" {
                        format!("Unknown tool `{name}`; only `search` is available.")
                    } else {
                        match query {
                            None => "Tool call missing string `query` argument.".to_string(),
                            Some(q) => {
                                let top_k = arguments
                                    .get("top_k")
                                    .and_then(|k| k.as_u64())
                                    .map(|k| k.max(1) as usize)
                                    .unwrap_or(config.search_top_k);
                                match clients.search.search(q, top_k) {
                                    Ok(hits) => format_hits(&hits),
                                    Err(e) => format!("Search failed: {e}"),
                                }
                            }
                        }
                    };
                    body = truncate_chars(&body, config.max_response_chars);

                    if config.inject_mid_rollout {
                        if let Some(idx) = index {
                            // the tool query is the state representation;
                            // fall back to the turn's last think text
                            let state = query.map(String::from).or_else(|| {
                                segments
                                    .iter()
                                    .rev()
                                    .find(|s| s.kind == crate::trajectory::SegmentKind::Think)
                                    .map(|s| s.text.clone())
                            });
                            if let Some(state) = state {
                                let state_vec = clients.embed.embed_one(&state)?;
                                let cases = retrieve_cases(
                                    idx,
                                    &state_vec,
                                    config.case_threshold,
                                    config.case_top_k,
                                )?;
                                if !cases.is_empty() {
                                    body.push_str("\n\n");
                                    body.push_str(&format_cases(&cases));
                                    case_injections.extend(
                                        cases.iter().map(|(e, s)| (e.id.clone(), *s)),
                                    );
                                }
                            }
                        }
                    }

                    segments.push(Segment::tool_response(body.clone()));
                    request.push(Role::Tool, format!("<tool_response>\n{body}\n</tool_response>"));
                }
                TurnEvent::FinalAnswer(answer) => {
                    segments.push(Segment::answer(answer.clone()));
                    final_answer = Some(answer);
                    break 'turns;
                }
                TurnEvent::Malformed(reason) => {
                    // keep the rollout alive with a corrective nudge; the
                    // malformed span itself is not a valid segment
                    progressed = true;
                    let notice = if reason.contains("tool_call") {
                        "Your tool call was malformed; emit valid arguments.".to_string()
                    } else {
                        format!("Your response was malformed ({reason}); follow the required format.")
                    };
                    request.push(Role::Tool, format!("<tool_response>\n{notice}\n</tool_response>"));
                }
            }
        }

        if !progressed {
            // a turn with neither tool call nor answer: nudge and move on
            request.push(
                Role::Tool,
                "<tool_response>\nEither call the search tool or give the final answer in \\boxed{}.\n</tool_response>".to_string(),
            );
        }
    }

    // Drop tool responses that would precede any tool call (possible only if
    // the model's first action was malformed); keeps the tag grammar intact.
    if !saw_tool_call {
        segments.retain(|s| s.kind != crate::trajectory::SegmentKind::ToolResponse);
    }

    let mut trajectory = Trajectory {
        question_id: example.id.clone(),
        segments,
        outcome_reward: 0.0,
        final_answer,
    };
    trajectory.outcome_reward = trajectory_reward(&trajectory, &example.gold_answers, reward);

    Ok(Episode {
        trajectory,
        case_injections,
        system_prompt,
    })
}

#[derive(Debug, Default)]
pub struct BatchOutcome {
    pub groups: Vec<RolloutGroup>,
    /// Per-episode failures: human-readable, one per failed episode.
    pub episode_errors: Vec<String>,
    /// Injection log pooled over all episodes.
    pub case_injections: Vec<(String, f64)>,
}

/// K independent episodes per example, each with a distinct sampling seed
/// derived from `base_seed`, grouped per example. Failed episodes are
/// recorded and the group keeps the rest.
pub fn run_batch(
    examples: &[QAExample],
    k: usize,
    index: Option<&RetrievalIndex>,
    clients: &Clients,
    config: &RolloutConfig,
    reward: &RewardSpec,
    base_seed: u64,
) -> Result<BatchOutcome> {
    if k == 0 {
        return Err(Error::Contract("rollout count K must be >= 1".into()));
    }
    config.validate()?;

    let jobs: Vec<(usize, usize)> = (0..examples.len())
        .flat_map(|e| (0..k).map(move |r| (e, r)))
        .collect();
    let episodes = par::map_ordered(&jobs, |&(e, r)| {
        let seed = crate::clients::episode_seed(base_seed, e, r);
        run_episode(&examples[e], index, clients, config, reward, seed)
    });

    let mut outcome = BatchOutcome::default();
    for (e_idx, example) in examples.iter().enumerate() {
        let mut trajectories = Vec::with_capacity(k);
        for r in 0..k {
            match &episodes[e_idx * k + r] {
                Ok(episode) => {
                    trajectories.push(episode.trajectory.clone());
                    outcome
                        .case_injections
                        .extend(episode.case_injections.iter().cloned());
                }
                Err(err) => outcome
                    .episode_errors
                    .push(format!("{} rollout {r}: {err}", example.id)),
            }
        }
        if trajectories.is_empty() {
            outcome
                .episode_errors
                .push(format!("{}: every rollout failed", example.id));
            continue;
        }
        outcome.groups.push(RolloutGroup {
            question_id: example.id.clone(),
            question: example.question.clone(),
            gold_answers: example.gold_answers.clone(),
            trajectories,
        });
    }
    Ok(outcome)
}
