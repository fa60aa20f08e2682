//! Contrastive distillation: reflect over each question's successful vs
//! failed rollouts and record the key decision points and traps as one
//! structured case experience per group.

use serde::Deserialize;

use crate::clients::{ChatClient, ChatRequest, Role};
use crate::error::{Error, Result};
use crate::experience::{Experience, MAX_TAGS};
use crate::jsonscan;
use crate::par;
use crate::templates;
use crate::trajectory::{split_by_reward, RolloutGroup, SegmentKind, Trajectory};

#[derive(Debug, Clone, serde::Serialize, Deserialize)]
pub struct DistillConfig {
    /// Reward at or above this counts as a success.
    #[serde(default = "default_success_threshold")]
    pub success_threshold: f64,
    /// Character budget per serialized trajectory in the reflection prompt.
    #[serde(default = "default_char_budget")]
    pub trajectory_char_budget: usize,
    /// Re-asks allowed when a reply fails to parse.
    #[serde(default = "default_repairs")]
    pub repair_attempts: u32,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
}

fn default_success_threshold() -> f64 {
    0.5
}
fn default_char_budget() -> usize {
    4000
}
fn default_repairs() -> u32 {
    2
}
fn default_max_tokens() -> u32 {
    1024
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            success_threshold: default_success_threshold(),
            trajectory_char_budget: default_char_budget(),
            repair_attempts: default_repairs(),
            max_tokens: default_max_tokens(),
            temperature: 0.0,
        }
    }
}

/// Fields parsed out of one reflection reply.
#[derive(Debug, Clone, Deserialize)]
pub struct ExperienceReply {
    #[serde(rename = "type")]
    pub kind_label: String,
    pub title: String,
    #[serde(default)]
    pub tags: Vec<String>,
    pub description: String,
    #[serde(default)]
    pub thinking: String,
}

/// Extract the first well-formed experience object from a model reply
/// (tolerating prose and code fences), validate required fields, and
/// truncate tags to the maximum. Returns the parsed fields plus warnings.
pub fn parse_experience_reply(text: &str) -> Result<(ExperienceReply, Vec<String>)> {
    let mut reply: ExperienceReply = jsonscan::extract_object(text)
        .ok_or_else(|| Error::ReplyParse("no experience object found in reply".into()))?;
    if reply.title.trim().is_empty() {
        return Err(Error::ReplyParse("experience reply has empty title".into()));
    }
    if reply.description.trim().is_empty() {
        return Err(Error::ReplyParse(
            "experience reply has empty description".into(),
        ));
    }
    let mut warnings = Vec::new();
    if reply.tags.len() > MAX_TAGS {
        warnings.push(format!(
            "reply carried {} tags, keeping the first {MAX_TAGS}",
            reply.tags.len()
        ));
        reply.tags.truncate(MAX_TAGS);
    }
    Ok((reply, warnings))
}

/// Render a trajectory back into the tag surface form the agent produced,
/// truncated to the character budget.
pub fn render_trajectory(t: &Trajectory, budget: usize) -> String {
    let mut out = String::new();
    for seg in &t.segments {
        if !out.is_empty() {
            out.push('\n');
        }
        match seg.kind {
            SegmentKind::Think => {
                out.push_str("<think>");
                out.push_str(&seg.text);
                out.push_str("</think>");
            }
            SegmentKind::ToolCall => {
                out.push_str("<tool_call>\n");
                out.push_str(&seg.text);
                out.push_str("\n</tool_call>");
            }
            SegmentKind::ToolResponse => {
                out.push_str("<tool_response>\n");
                out.push_str(&seg.text);
                out.push_str("\n</tool_response>");
            }
            SegmentKind::Answer => {
                out.push_str("\\boxed{");
                out.push_str(&seg.text);
                out.push('}');
            }
        }
    }
    truncate_chars(&mut out, budget);
    out
}

fn truncate_chars(s: &mut String, budget: usize) {
    if s.chars().count() <= budget {
        return;
    }
    let cut: usize = s.char_indices().nth(budget).map(|(i, _)| i).unwrap();
    s.truncate(cut);
    s.push_str("…[truncated]");
}

fn render_attempts(trajectories: &[&Trajectory], budget: usize) -> String {
    trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| format!("Attempt {}:\n{}", i + 1, render_trajectory(t, budget)))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Reflect over one question's contrastive rollouts and return the distilled
/// case experience. Both partitions must be non-empty.
pub fn distill_case(
    question_id: &str,
    question: &str,
    successes: &[&Trajectory],
    failures: &[&Trajectory],
    chat: &dyn ChatClient,
    cfg: &DistillConfig,
) -> Result<Experience> {
    if successes.is_empty() || failures.is_empty() {
        return Err(Error::Contract(
            "distill_case needs at least one success and one failure".into(),
        ));
    }
    let prompt = templates::render(
        templates::DISTILL_PROMPT,
        &[
            ("question", question),
            (
                "successes",
                &render_attempts(successes, cfg.trajectory_char_budget),
            ),
            (
                "failures",
                &render_attempts(failures, cfg.trajectory_char_budget),
            ),
        ],
    );
    let mut request = ChatRequest::new("You reflect on agent trajectories.", prompt);
    request.temperature = cfg.temperature;
    request.max_tokens = cfg.max_tokens;

    let mut last_err = None;
    for attempt in 0..=cfg.repair_attempts {
        let reply_text = chat.complete(&request)?;
        match parse_experience_reply(&reply_text) {
            Ok((reply, warnings)) => {
                for w in warnings {
                    log::warn!("{question_id}: {w}");
                }
                return Ok(Experience {
                    id: format!("e1-{question_id}"),
                    kind_label: reply.kind_label,
                    title: reply.title,
                    tags: reply.tags,
                    description: reply.description,
                    thinking: reply.thinking,
                    qa_ids: vec![question_id.to_string()],
                    level: 1,
                    child_ids: Vec::new(),
                });
            }
            Err(e) => {
                last_err = Some(e);
                if attempt < cfg.repair_attempts {
                    request.push(Role::Assistant, reply_text);
                    request.push(Role::User, "Return only the object in the specified format.");
                }
            }
        }
    }
    Err(Error::Distill {
        question_id: question_id.to_string(),
        reason: last_err
            .map(|e| e.to_string())
            .unwrap_or_else(|| "no attempt made".into()),
    })
}

#[derive(Debug, Default)]
pub struct DistillReport {
    pub experiences: Vec<Experience>,
    /// Groups skipped because they were all-success or all-failure.
    pub skipped: usize,
    /// Per-sample failures: (question_id, reason).
    pub errors: Vec<(String, String)>,
}

enum GroupOutcome {
    Experience(Box<Experience>),
    Skipped,
    Failed(String, String),
    Fatal(Error),
}

/// Distill every group that has both successes and failures; all-success or
/// all-failure groups are skipped and counted. Per-sample failures land in
/// the report; only configuration errors abort the whole run.
pub fn distill_corpus(
    groups: &[RolloutGroup],
    chat: &dyn ChatClient,
    cfg: &DistillConfig,
) -> Result<DistillReport> {
    let outcomes = par::map_ordered(groups, |group| {
        let (successes, failures) = split_by_reward(group, cfg.success_threshold);
        if successes.is_empty() || failures.is_empty() {
            return GroupOutcome::Skipped;
        }
        match distill_case(
            &group.question_id,
            &group.question,
            &successes,
            &failures,
            chat,
            cfg,
        ) {
            Ok(e) => GroupOutcome::Experience(Box::new(e)),
            Err(e @ Error::Config(_)) => GroupOutcome::Fatal(e),
            Err(e) => GroupOutcome::Failed(group.question_id.clone(), e.to_string()),
        }
    });

    let mut report = DistillReport::default();
    let mut seen_ids = std::collections::BTreeSet::new();
    for outcome in outcomes {
        match outcome {
            GroupOutcome::Experience(e) => {
                if !seen_ids.insert(e.id.clone()) {
                    report
                        .errors
                        .push((e.id.clone(), "duplicate question_id in corpus".into()));
                    continue;
                }
                report.experiences.push(*e);
            }
            GroupOutcome::Skipped => report.skipped += 1,
            GroupOutcome::Failed(qid, reason) => report.errors.push((qid, reason)),
            GroupOutcome::Fatal(e) => return Err(e),
        }
    }
    Ok(report)
}
