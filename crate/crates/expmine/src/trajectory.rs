//! Rollout data model and the line-delimited trajectory file format.
//!
//! A trajectory is an ordered list of tagged segments. Segments are either
//! policy-generated (`think`, `tool_call`, `answer`) or injected by the
//! environment (`tool_response`, which also carries any experience text
//! injected alongside tool output). The `injected` flag drives loss masking
//! downstream.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Think,
    ToolCall,
    ToolResponse,
    Answer,
}

impl SegmentKind {
    /// True for segments supplied by the environment rather than the policy.
    pub fn is_injected_kind(self) -> bool {
        matches!(self, SegmentKind::ToolResponse)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub text: String,
    pub injected: bool,
}

impl Segment {
    pub fn think(text: impl Into<String>) -> Self {
        Segment {
            kind: SegmentKind::Think,
            text: text.into(),
            injected: false,
        }
    }

    pub fn tool_call(text: impl Into<String>) -> Self {
        Segment {
            kind: SegmentKind::ToolCall,
            text: text.into(),
            injected: false,
        }
    }

    pub fn tool_response(text: impl Into<String>) -> Self {
        Segment {
            kind: SegmentKind::ToolResponse,
            text: text.into(),
            injected: true,
        }
    }

    pub fn answer(text: impl Into<String>) -> Self {
        Segment {
            kind: SegmentKind::Answer,
            text: text.into(),
            injected: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub question_id: String,
    pub segments: Vec<Segment>,
    /// Outcome reward in [0, 1].
    pub outcome_reward: f64,
    pub final_answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub question_id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hop_count: Option<u32>,
}

/// Extract the content of the first `\boxed{…}` span, scanning braces with
/// balance so nested LaTeX groups survive. Returns `None` when no complete
/// span exists.
pub fn extract_boxed(text: &str) -> Option<&str> {
    const MARKER: &str = "\\boxed{";
    let start = text.find(MARKER)? + MARKER.len();
    let rest = &text[start..];
    let mut depth = 1usize;
    for (i, c) in rest.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&rest[..i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Check every structural invariant of a trajectory. Returns non-fatal
/// warnings (currently: extra `answer` segments beyond the first).
pub fn validate_trajectory(t: &Trajectory) -> Result<Vec<String>> {
    let mut warnings = Vec::new();
    let mut saw_tool_call = false;
    let mut answers = 0usize;

    if !(0.0..=1.0).contains(&t.outcome_reward) || !t.outcome_reward.is_finite() {
        return Err(Error::Contract(format!(
            "outcome_reward {} outside [0, 1]",
            t.outcome_reward
        )));
    }

    for (i, seg) in t.segments.iter().enumerate() {
        let expect_injected = seg.kind.is_injected_kind();
        if seg.injected != expect_injected {
            return Err(Error::Contract(format!(
                "segment {i}: kind {:?} must have injected = {expect_injected}",
                seg.kind
            )));
        }
        match seg.kind {
            SegmentKind::ToolCall => {
                let v: serde_json::Value = serde_json::from_str(&seg.text).map_err(|e| {
                    Error::Contract(format!("segment {i}: tool_call body is not valid: {e}"))
                })?;
                let obj = v.as_object().ok_or_else(|| {
                    Error::Contract(format!("segment {i}: tool_call body is not an object"))
                })?;
                if !obj.get("name").is_some_and(|n| n.is_string()) {
                    return Err(Error::Contract(format!(
                        "segment {i}: tool_call missing string `name`"
                    )));
                }
                if !obj.get("arguments").is_some_and(|a| a.is_object()) {
                    return Err(Error::Contract(format!(
                        "segment {i}: tool_call missing object `arguments`"
                    )));
                }
                saw_tool_call = true;
            }
            SegmentKind::ToolResponse => {
                if !saw_tool_call {
                    return Err(Error::Contract(format!(
                        "segment {i}: tool_response without a preceding tool_call"
                    )));
                }
            }
            SegmentKind::Answer => {
                if seg.text.is_empty() {
                    return Err(Error::Contract(format!("segment {i}: empty answer")));
                }
                answers += 1;
            }
            SegmentKind::Think => {}
        }
    }

    if answers > 1 {
        warnings.push(format!(
            "trajectory {}: {answers} answer segments, keeping the first",
            t.question_id
        ));
    }

    let first_answer = t
        .segments
        .iter()
        .find(|s| s.kind == SegmentKind::Answer)
        .map(|s| s.text.as_str());
    match (&t.final_answer, first_answer) {
        (Some(fa), Some(seg)) if fa == seg => {}
        (None, None) => {}
        (Some(_), Some(_)) => {
            return Err(Error::Contract(
                "final_answer does not match the first answer segment".into(),
            ))
        }
        (Some(_), None) => {
            return Err(Error::Contract(
                "final_answer present without an answer segment".into(),
            ))
        }
        (None, Some(_)) => {
            return Err(Error::Contract(
                "answer segment present but final_answer missing".into(),
            ))
        }
    }

    Ok(warnings)
}

fn validate_group(g: &RolloutGroup) -> Result<Vec<String>> {
    if g.trajectories.is_empty() {
        return Err(Error::Contract(format!(
            "group {}: no trajectories",
            g.question_id
        )));
    }
    let mut warnings = Vec::new();
    for t in &g.trajectories {
        if t.question_id != g.question_id {
            return Err(Error::Contract(format!(
                "group {}: trajectory carries question_id {}",
                g.question_id, t.question_id
            )));
        }
        warnings.extend(validate_trajectory(t)?);
    }
    Ok(warnings)
}

// On-disk record shapes. Trajectory rows inside a group line do not repeat
// the group's question_id; it is filled in at parse time.

#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    segments: Vec<Segment>,
    outcome_reward: f64,
    final_answer: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct GroupRecord {
    question_id: String,
    question: String,
    gold_answers: Vec<String>,
    trajectories: Vec<TrajectoryRecord>,
}

impl From<&RolloutGroup> for GroupRecord {
    fn from(g: &RolloutGroup) -> Self {
        GroupRecord {
            question_id: g.question_id.clone(),
            question: g.question.clone(),
            gold_answers: g.gold_answers.clone(),
            trajectories: g
                .trajectories
                .iter()
                .map(|t| TrajectoryRecord {
                    segments: t.segments.clone(),
                    outcome_reward: t.outcome_reward,
                    final_answer: t.final_answer.clone(),
                })
                .collect(),
        }
    }
}

impl GroupRecord {
    fn into_group(self) -> RolloutGroup {
        let question_id = self.question_id;
        RolloutGroup {
            trajectories: self
                .trajectories
                .into_iter()
                .map(|t| Trajectory {
                    question_id: question_id.clone(),
                    segments: t.segments,
                    outcome_reward: t.outcome_reward,
                    final_answer: t.final_answer,
                })
                .collect(),
            question_id,
            question: self.question,
            gold_answers: self.gold_answers,
        }
    }
}

/// Parse a line-delimited rollout-group file. Every group is validated
/// against the structural invariants; a bad line fails with its line number.
/// An empty file parses to an empty list.
pub fn parse_trajectory_file(path: &Path) -> Result<Vec<RolloutGroup>> {
    let data = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_trajectory_str(&data)
}

/// Same as [`parse_trajectory_file`] but over an in-memory string.
pub fn parse_trajectory_str(data: &str) -> Result<Vec<RolloutGroup>> {
    let mut groups = Vec::new();
    for (idx, line) in data.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: GroupRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(line_no, format!("malformed record: {e}")))?;
        let group = record.into_group();
        let warnings =
            validate_group(&group).map_err(|e| Error::parse(line_no, e.to_string()))?;
        for w in warnings {
            log::warn!("{}:{line_no}: {w}", "trajectory file");
        }
        groups.push(group);
    }
    Ok(groups)
}

/// Serialize groups one per line into a string.
pub fn serialize_trajectory_str(groups: &[RolloutGroup]) -> Result<String> {
    let mut out = Vec::new();
    for g in groups {
        serde_json::to_writer(&mut out, &GroupRecord::from(g))?;
        out.push(b'\n');
    }
    Ok(String::from_utf8(out).expect("serde_json emits utf-8"))
}

/// Serialize groups one per line. Output re-parses to an equal value.
pub fn serialize_trajectory_file(groups: &[RolloutGroup], path: &Path) -> Result<()> {
    let out = serialize_trajectory_str(groups)?;
    let mut f =
        fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Partition a group's trajectories by `outcome_reward >= success_threshold`
/// (inclusive boundary), preserving order within each side.
pub fn split_by_reward(
    group: &RolloutGroup,
    success_threshold: f64,
) -> (Vec<&Trajectory>, Vec<&Trajectory>) {
    let mut successes = Vec::new();
    let mut failures = Vec::new();
    for t in &group.trajectories {
        if t.outcome_reward >= success_threshold {
            successes.push(t);
        } else {
            failures.push(t);
        }
    }
    (successes, failures)
}

/// Parse a line-delimited QA dataset file.
pub fn parse_dataset_file(path: &Path) -> Result<Vec<QAExample>> {
    let data = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut examples = Vec::new();
    for (idx, line) in data.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: QAExample = serde_json::from_str(line)
            .map_err(|e| Error::parse(idx + 1, format!("malformed example: {e}")))?;
        if ex.gold_answers.is_empty() {
            return Err(Error::parse(idx + 1, "gold_answers empty"));
        }
        examples.push(ex);
    }
    Ok(examples)
}
