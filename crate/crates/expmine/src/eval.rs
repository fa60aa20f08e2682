//! QA metrics (exact match, cover exact match, word-level F1), the judge
//! harness, and report aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clients::{ChatClient, ChatRequest};
use crate::error::{Error, Result};
use crate::par;
use crate::templates;
use crate::trajectory::{QAExample, Trajectory};

/// Lowercase, strip ASCII punctuation, drop articles (a/an/the), collapse
/// whitespace. Idempotent.
pub fn normalize_answer(text: &str) -> String {
    let lower = text.to_lowercase();
    let no_punct: String = lower
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    no_punct
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// 1.0 iff the normalized strings are equal.
pub fn em(prediction: &str, gold: &str) -> f64 {
    (normalize_answer(prediction) == normalize_answer(gold)) as u8 as f64
}

/// 1.0 iff the normalized gold is a contiguous substring of the normalized
/// prediction. An empty normalized gold only matches an empty prediction,
/// which keeps `cem = 1` implying `f1 > 0`.
pub fn cem(prediction: &str, gold: &str) -> f64 {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let covered = if g.is_empty() {
        p.is_empty()
    } else {
        p.contains(&g)
    };
    covered as u8 as f64
}

/// Harmonic mean of token precision and recall over normalized whitespace
/// tokens, with multiset overlap. Both sides empty scores 1 by convention;
/// exactly one side empty scores 0.
pub fn f1(prediction: &str, gold: &str) -> f64 {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() && gt.is_empty() {
        return 1.0;
    }
    if pt.is_empty() || gt.is_empty() {
        return 0.0;
    }
    let mut gold_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &gt {
        *gold_counts.entry(t).or_default() += 1;
    }
    let mut num_same = 0usize;
    for t in &pt {
        if let Some(c) = gold_counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                num_same += 1;
            }
        }
    }
    if num_same == 0 {
        return 0.0;
    }
    let precision = num_same as f64 / pt.len() as f64;
    let recall = num_same as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Render the judge prompt and parse the first in-range integer (0–5) from
/// the reply, re-asking up to `repairs` times on unusable replies.
pub fn judge_score(
    question: &str,
    golds: &[String],
    response: &str,
    chat: &dyn ChatClient,
    repairs: u32,
) -> Result<u8> {
    let prompt = templates::render(
        templates::JUDGE_PROMPT,
        &[
            ("question", question),
            ("answer", &serde_json::to_string(golds)?),
            ("response", response),
        ],
    );
    let mut request = ChatRequest::new("You are an impartial grader.", prompt);
    request.max_tokens = 64;
    for attempt in 0..=repairs {
        let reply = chat.complete(&request)?;
        if let Some(score) = first_score_in_range(&reply) {
            return Ok(score);
        }
        if attempt < repairs {
            request.push(
                crate::clients::Role::Assistant,
                reply,
            );
            request.push(
                crate::clients::Role::User,
                "Respond with only a single integer between 0 and 5.",
            );
        }
    }
    Err(Error::ReplyParse(
        "judge reply carried no integer between 0 and 5".into(),
    ))
}

/// First maximal digit run whose value lies in 0..=5.
fn first_score_in_range(reply: &str) -> Option<u8> {
    let mut digits = String::new();
    let mut chars = reply.chars().peekable();
    while let Some(c) = chars.next() {
        if c.is_ascii_digit() {
            digits.clear();
            digits.push(c);
            while let Some(&n) = chars.peek() {
                if n.is_ascii_digit() {
                    digits.push(n);
                    chars.next();
                } else {
                    break;
                }
            }
            if let Ok(v) = digits.parse::<u64>() {
                if v <= 5 {
                    return Some(v as u8);
                }
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub id: String,
    pub em: f64,
    pub cem: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub em_mean: f64,
    pub cem_mean: f64,
    pub f1_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_example: Vec<ExampleScore>,
    pub aggregates: Aggregates,
    /// Judge failures, excluded from the judge aggregate.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub judge_errors: Vec<String>,
}

impl EvalReport {
    /// Aligned plain-text table for the terminal.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<24} {:>6} {:>6} {:>8} {:>6}\n",
            "id", "em", "cem", "f1", "judge"
        ));
        for row in &self.per_example {
            out.push_str(&format!(
                "{:<24} {:>6.2} {:>6.2} {:>8.4} {:>6}\n",
                row.id,
                row.em,
                row.cem,
                row.f1,
                row.judge.map_or("-".to_string(), |j| j.to_string()),
            ));
        }
        out.push_str(&format!(
            "{:<24} {:>6.3} {:>6.3} {:>8.4} {:>6}\n",
            "mean",
            self.aggregates.em_mean,
            self.aggregates.cem_mean,
            self.aggregates.f1_mean,
            self.aggregates
                .judge_mean
                .map_or("-".to_string(), |j| format!("{j:.2}")),
        ));
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Score trajectories against their dataset examples with max-over-golds
/// semantics. Rows are ordered by example id. When a judge client is given,
/// each row also gets a 0–5 judge score; judge failures are reported and
/// excluded from the judge mean.
pub fn run_eval(
    dataset: &[QAExample],
    trajectories: &[Trajectory],
    judge: Option<&dyn ChatClient>,
) -> Result<EvalReport> {
    let by_id: BTreeMap<&str, &QAExample> =
        dataset.iter().map(|e| (e.id.as_str(), e)).collect();

    let unmatched: Vec<&str> = trajectories
        .iter()
        .filter(|t| !by_id.contains_key(t.question_id.as_str()))
        .map(|t| t.question_id.as_str())
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::Contract(format!(
            "trajectories reference unknown example ids: {}",
            unmatched.join(", ")
        )));
    }

    let mut judge_errors = Vec::new();
    let mut rows: Vec<ExampleScore> = {
        let scored: Vec<(ExampleScore, Option<String>)> =
            par::map_ordered(trajectories, |t| {
                let ex = by_id[t.question_id.as_str()];
                let (em_s, cem_s, f1_s) = match &t.final_answer {
                    None => (0.0, 0.0, 0.0),
                    Some(answer) => {
                        let em_s = ex.gold_answers.iter().map(|g| em(answer, g)).fold(0.0, f64::max);
                        let cem_s = ex.gold_answers.iter().map(|g| cem(answer, g)).fold(0.0, f64::max);
                        let f1_s = ex.gold_answers.iter().map(|g| f1(answer, g)).fold(0.0, f64::max);
                        (em_s, cem_s, f1_s)
                    }
                };
                let (judge_val, judge_err) = match judge {
                    None => (None, None),
                    Some(chat) => {
                        let response = t.final_answer.clone().unwrap_or_default();
                        match judge_score(&ex.question, &ex.gold_answers, &response, chat, 2) {
                            Ok(s) => (Some(s), None),
                            Err(e) => (None, Some(format!("{}: {e}", ex.id))),
                        }
                    }
                };
                (
                    ExampleScore {
                        id: ex.id.clone(),
                        em: em_s,
                        cem: cem_s,
                        f1: f1_s,
                        judge: judge_val,
                    },
                    judge_err,
                )
            });
        let mut rows = Vec::with_capacity(scored.len());
        for (row, err) in scored {
            if let Some(e) = err {
                judge_errors.push(e);
            }
            rows.push(row);
        }
        rows
    };
    rows.sort_by(|a, b| a.id.cmp(&b.id));

    let aggregates = Aggregates {
        em_mean: mean(rows.iter().map(|r| r.em)),
        cem_mean: mean(rows.iter().map(|r| r.cem)),
        f1_mean: mean(rows.iter().map(|r| r.f1)),
        judge_mean: {
            let scored: Vec<f64> = rows
                .iter()
                .filter_map(|r| r.judge.map(f64::from))
                .collect();
            if scored.is_empty() {
                None
            } else {
                Some(mean(scored.into_iter()))
            }
        },
    };

    Ok(EvalReport {
        per_example: rows,
        aggregates,
        judge_errors,
    })
}
