//! Outcome rewards, group-relative advantages, and the clipped masked
//! surrogate objective as exact reference numerics. No parameters are
//! updated here; the point is a bit-stable scalar reference for regression
//! checks against training stacks.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::par;
use crate::trajectory::{validate_trajectory, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    ExactMatch,
    CoverExactMatch,
    F1,
    /// Exact match plus `format_bonus_weight` when the trajectory is
    /// tag-well-formed, clamped to [0, 1].
    Composite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    #[serde(default)]
    pub format_bonus_weight: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec {
            kind: RewardKind::ExactMatch,
            format_bonus_weight: 0.0,
        }
    }
}

/// Score a predicted answer against gold answers, taking the best-matching
/// gold. A missing prediction scores 0.
pub fn outcome_reward(prediction: Option<&str>, golds: &[String], spec: &RewardSpec) -> f64 {
    let Some(pred) = prediction else { return 0.0 };
    let metric = |g: &String| match spec.kind {
        RewardKind::ExactMatch | RewardKind::Composite => eval::em(pred, g),
        RewardKind::CoverExactMatch => eval::cem(pred, g),
        RewardKind::F1 => eval::f1(pred, g),
    };
    golds.iter().map(metric).fold(0.0, f64::max)
}

/// Trajectory-level reward: the answer metric, plus the format bonus for
/// composite specs when every structural invariant holds and an answer was
/// produced.
pub fn trajectory_reward(trajectory: &Trajectory, golds: &[String], spec: &RewardSpec) -> f64 {
    let base = outcome_reward(trajectory.final_answer.as_deref(), golds, spec);
    if spec.kind != RewardKind::Composite || spec.format_bonus_weight == 0.0 {
        return base;
    }
    let well_formed =
        validate_trajectory(trajectory).is_ok() && trajectory.final_answer.is_some();
    (base + spec.format_bonus_weight * well_formed as u8 as f64).min(1.0)
}

/// Group-relative standardization: (r - mean) / (population std + guard).
/// A zero-variance group yields all-zero advantages.
pub fn group_advantages(rewards: &[f64], guard: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Contract(format!(
            "group advantages need >= 2 rewards, got {}",
            rewards.len()
        )));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::Contract("non-finite reward".into()));
    }
    // zero variance means all rewards equal; test that directly so identical
    // rewards yield exact zeros regardless of rounding in the mean
    if rewards.windows(2).all(|w| w[0] == w[1]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / (std + guard)).collect())
}

/// Per-token log-probabilities under the current, old, and reference
/// policies, plus the loss mask (0 = injected token, excluded everywhere).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub logp_new: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
    pub mask: Vec<u8>,
}

impl TokenSequence {
    pub fn validate(&self) -> Result<()> {
        let t = self.logp_new.len();
        if t == 0 {
            return Err(Error::Contract("empty token sequence".into()));
        }
        if self.logp_old.len() != t || self.logp_ref.len() != t || self.mask.len() != t {
            return Err(Error::Contract(format!(
                "sequence length mismatch: new {t}, old {}, ref {}, mask {}",
                self.logp_old.len(),
                self.logp_ref.len(),
                self.mask.len()
            )));
        }
        for v in self
            .logp_new
            .iter()
            .chain(&self.logp_old)
            .chain(&self.logp_ref)
        {
            if !v.is_finite() {
                return Err(Error::Contract("non-finite log-probability".into()));
            }
        }
        if self.mask.iter().any(|m| *m > 1) {
            return Err(Error::Contract("mask entries must be 0 or 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    /// Mean of per-token terms within each sequence (length-normalized).
    TokenMean,
    /// Sum of per-token terms within each sequence.
    SequenceSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    /// Clip range epsilon.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// KL penalty weight beta.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Expected group size; None accepts any size >= 2.
    #[serde(default)]
    pub group_size: Option<usize>,
    /// Guard added to the advantage denominator.
    #[serde(default = "default_advantage_eps")]
    pub advantage_eps: f64,
    #[serde(default = "default_aggregate")]
    pub aggregate: Aggregate,
}

fn default_epsilon() -> f64 {
    0.2
}
fn default_beta() -> f64 {
    1e-3
}
fn default_advantage_eps() -> f64 {
    1e-8
}
fn default_aggregate() -> Aggregate {
    Aggregate::TokenMean
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            epsilon: 0.2,
            beta: 1e-3,
            group_size: None,
            advantage_eps: 1e-8,
            aggregate: Aggregate::TokenMean,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Contract("epsilon must be > 0".into()));
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(Error::Contract("beta must be >= 0".into()));
        }
        if self.advantage_eps < 0.0 {
            return Err(Error::Contract("advantage_eps must be >= 0".into()));
        }
        Ok(())
    }
}

/// Masked mean of the non-negative per-token KL estimator
/// `exp(d) - d - 1` with `d = logp_ref - logp_new`. All-masked sequences
/// contribute 0.
pub fn kl_estimate(seq: &TokenSequence) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..seq.logp_new.len() {
        if seq.mask[t] == 1 {
            let d = seq.logp_ref[t] - seq.logp_new[t];
            sum += d.exp() - d - 1.0;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Mean importance ratio over all unmasked tokens in the group.
    pub mean_ratio: f64,
    /// Fraction of unmasked tokens with |ratio - 1| > epsilon.
    pub clip_fraction: f64,
    /// Population variance of the group advantages.
    pub advantage_variance: f64,
    /// Mean per-sequence KL estimate.
    pub kl: f64,
}

/// The clipped masked surrogate objective.
///
/// Per unmasked token: `ratio = exp(logp_new - logp_old)` and
/// `term = min(ratio * adv, clip(ratio, 1-eps, 1+eps) * adv)`. Terms
/// aggregate per sequence (token mean by default), then average over the
/// group; the KL penalty `beta * mean(kl_estimate)` is subtracted. Masked
/// tokens contribute to nothing.
///
/// The per-token min is computed in the factored form `adv * h(ratio)` with
/// `h = min(ratio, 1+eps)` for positive advantages and
/// `h = max(ratio, 1-eps)` for negative ones, which is algebraically equal
/// and makes the on-policy value exactly `mean(adv)`.
pub fn grpo_objective(
    group: &[TokenSequence],
    rewards: &[f64],
    config: &GrpoConfig,
) -> Result<(f64, Diagnostics)> {
    config.validate()?;
    if group.len() != rewards.len() {
        return Err(Error::Contract(format!(
            "{} sequences vs {} rewards",
            group.len(),
            rewards.len()
        )));
    }
    if let Some(g) = config.group_size {
        if group.len() != g {
            return Err(Error::Contract(format!(
                "expected group size {g}, got {}",
                group.len()
            )));
        }
    }
    for seq in group {
        seq.validate()?;
    }
    let advantages = group_advantages(rewards, config.advantage_eps)?;

    let g = group.len() as f64;
    let mut surrogate_sum = 0.0;
    let mut kl_sum = 0.0;
    let mut ratio_sum = 0.0;
    let mut clipped = 0usize;
    let mut unmasked = 0usize;

    for (seq, &adv) in group.iter().zip(&advantages) {
        let mut h_sum = 0.0;
        let mut count = 0usize;
        for t in 0..seq.logp_new.len() {
            if seq.mask[t] == 0 {
                continue;
            }
            let ratio = (seq.logp_new[t] - seq.logp_old[t]).exp();
            ratio_sum += ratio;
            if (ratio - 1.0).abs() > config.epsilon {
                clipped += 1;
            }
            unmasked += 1;
            let h = if adv > 0.0 {
                ratio.min(1.0 + config.epsilon)
            } else if adv < 0.0 {
                ratio.max(1.0 - config.epsilon)
            } else {
                0.0
            };
            h_sum += h;
            count += 1;
        }
        let seq_value = if count == 0 {
            0.0
        } else {
            match config.aggregate {
                Aggregate::TokenMean => adv * (h_sum / count as f64),
                Aggregate::SequenceSum => adv * h_sum,
            }
        };
        surrogate_sum += seq_value;
        kl_sum += kl_estimate(seq);
    }

    let objective = surrogate_sum / g - config.beta * (kl_sum / g);
    let diagnostics = Diagnostics {
        mean_ratio: if unmasked == 0 {
            0.0
        } else {
            ratio_sum / unmasked as f64
        },
        clip_fraction: if unmasked == 0 {
            0.0
        } else {
            clipped as f64 / unmasked as f64
        },
        advantage_variance: {
            let n = advantages.len() as f64;
            let m = advantages.iter().sum::<f64>() / n;
            advantages.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n
        },
        kl: kl_sum / g,
    };
    Ok((objective, diagnostics))
}

/// Token mask from segment injection flags: 0 exactly where the owning
/// segment was injected. Spans must cover 0..T contiguously without overlap.
pub fn build_token_mask(
    trajectory: &Trajectory,
    tokenizer_spans: &[(usize, Range<usize>)],
) -> Result<Vec<u8>> {
    let mut spans: Vec<(usize, Range<usize>)> = tokenizer_spans.to_vec();
    spans.sort_by_key(|(_, r)| r.start);
    let mut expected_start = 0usize;
    for (seg_idx, range) in &spans {
        if *seg_idx >= trajectory.segments.len() {
            return Err(Error::Contract(format!(
                "span references segment {seg_idx} of {}",
                trajectory.segments.len()
            )));
        }
        if range.start != expected_start {
            return Err(Error::Contract(format!(
                "spans must tile the token stream: expected start {expected_start}, got {}",
                range.start
            )));
        }
        if range.end < range.start {
            return Err(Error::Contract("inverted span".into()));
        }
        expected_start = range.end;
    }
    let total = expected_start;
    let mut mask = vec![1u8; total];
    for (seg_idx, range) in &spans {
        if trajectory.segments[*seg_idx].injected {
            for m in &mut mask[range.clone()] {
                *m = 0;
            }
        }
    }
    Ok(mask)
}

/// One grpo-check input record: a rollout group's sequences and rewards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectiveInputs {
    pub rewards: Vec<f64>,
    pub sequences: Vec<TokenSequence>,
}

/// Batch evaluation of [`grpo_objective`]; groups are independent and run in
/// parallel under the `parallel` feature.
pub fn objective_for_groups(
    groups: &[ObjectiveInputs],
    config: &GrpoConfig,
) -> Vec<Result<(f64, Diagnostics)>> {
    par::map_ordered(groups, |g| grpo_objective(&g.sequences, &g.rewards, config))
}
