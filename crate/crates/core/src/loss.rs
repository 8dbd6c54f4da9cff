//! Reference weighted multi-turn objective and per-token weight masks.
//!
//! The total loss is `alpha1 * L_caption + alpha2 * L_contrastive + alpha3 * L_target`,
//! each `L` being the mean token cross-entropy of one assistant turn.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::TrainingRecord;
use crate::domain::{Phase, TurnWeights, WeightsError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("turn '{0}' has no tokens")]
    EmptyTurn(Phase),
    #[error("turn '{phase}' token {index} has a positive logprob")]
    PositiveLogprob { phase: Phase, index: usize },
    #[error("loss for turn {0} is negative")]
    NegativeLoss(usize),
    #[error("invalid weights: {0}")]
    InvalidWeights(#[from] WeightsError),
    #[error("token span {index} [{start}, {end}) overlaps the previous span")]
    OverlappingSpans { index: usize, start: usize, end: usize },
    #[error("token span {index} [{start}, {end}) is empty or outside the rendered text ({len} chars)")]
    SpanOutOfRange { index: usize, start: usize, end: usize, len: usize },
    #[error("fixture lists phase '{0}' more than once")]
    DuplicatePhase(Phase),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnLossInput<S = f64> {
    pub phase: Phase,
    pub token_logprobs: Vec<S>,
}

/// Mean negative log-likelihood over the turn's answer tokens.
pub fn turn_cross_entropy<S: Scalar>(input: &TurnLossInput<S>) -> Result<S, LossError> {
    if input.token_logprobs.is_empty() {
        return Err(LossError::EmptyTurn(input.phase));
    }
    let mut sum = S::zero();
    for (index, &lp) in input.token_logprobs.iter().enumerate() {
        if lp > S::zero() {
            return Err(LossError::PositiveLogprob { phase: input.phase, index });
        }
        sum = sum + lp;
    }
    let n = S::from_usize(input.token_logprobs.len()).expect("token count fits the scalar type");
    Ok(S::zero() - sum / n)
}

pub fn total_loss<S: Scalar>(l_cap: S, l_dis: S, l_target: S, weights: &TurnWeights<S>) -> Result<S, LossError> {
    weights.check()?;
    for (i, l) in [l_cap, l_dis, l_target].into_iter().enumerate() {
        if l < S::zero() {
            return Err(LossError::NegativeLoss(i));
        }
    }
    Ok(total_loss_unchecked(l_cap, l_dis, l_target, weights))
}

/// The weighted sum without validating the weights or the losses.
pub fn total_loss_unchecked<S: Scalar>(l_cap: S, l_dis: S, l_target: S, weights: &TurnWeights<S>) -> S {
    weights.alpha1 * l_cap + weights.alpha2 * l_dis + weights.alpha3 * l_target
}

/// Input of the `loss check` command: per-turn answer-token logprobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossFixture {
    #[serde(default)]
    pub weights: TurnWeights<f64>,
    pub turns: Vec<TurnLossInput<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCheck {
    pub per_turn: BTreeMap<Phase, f64>,
    pub weights: TurnWeights<f64>,
    pub total: f64,
}

/// Computes per-turn cross-entropy and the weighted total. Missing phases
/// contribute zero loss, which is how reduced dialogue structures train.
pub fn check_fixture(fixture: &LossFixture) -> Result<LossCheck, LossError> {
    let mut per_turn = BTreeMap::new();
    for turn in &fixture.turns {
        let ce = turn_cross_entropy(turn)?;
        if per_turn.insert(turn.phase, ce).is_some() {
            return Err(LossError::DuplicatePhase(turn.phase));
        }
    }
    let get = |p| per_turn.get(&p).copied().unwrap_or(0.0);
    let total = total_loss(get(Phase::Caption), get(Phase::Contrastive), get(Phase::Target), &fixture.weights)?;
    Ok(LossCheck { per_turn, weights: fixture.weights, total })
}

/// Half-open `[start, end)` character range of one token in the rendered dialogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub token_index: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMask {
    pub record_id: String,
    pub entries: Vec<MaskEntry>,
}

impl WeightMask {
    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.weight)
    }
}

/// A contiguous piece of the rendered dialogue and the weight its tokens carry.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub weight: f64,
}

/// Renders a record as `q1 \n a1 \n q2 \n a2 ...` and returns the text with
/// one segment per question (weight 0) and per answer (its turn weight).
/// Offsets count `char`s; the `\n` separators belong to no segment.
pub fn render_dialogue(record: &TrainingRecord) -> (String, Vec<Segment>) {
    let mut text = String::new();
    let mut segments = Vec::new();
    let mut cursor = 0usize;
    for turn in &record.turns {
        for (part, weight) in [(&turn.question, 0.0), (&turn.answer, turn.loss_weight)] {
            if cursor > 0 {
                text.push('\n');
                cursor += 1;
            }
            let len = part.chars().count();
            text.push_str(part);
            segments.push(Segment { start: cursor, end: cursor + len, weight });
            cursor += len;
        }
    }
    (text, segments)
}

/// Whitespace tokenization of `text` as character spans.
pub fn whitespace_spans(text: &str) -> Vec<TokenSpan> {
    let mut spans = Vec::new();
    let mut start = None;
    let mut count = 0;
    for (i, c) in text.chars().enumerate() {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                spans.push(TokenSpan { start: s, end: i });
                start = None;
            }
            _ => {}
        }
        count = i + 1;
    }
    if let Some(s) = start {
        spans.push(TokenSpan { start: s, end: count });
    }
    spans
}

/// Assigns each token the weight of the segment its first character falls in:
/// 0 for question text and separators, the turn's weight for answer text.
pub fn weight_mask(record: &TrainingRecord, spans: &[TokenSpan]) -> Result<WeightMask, LossError> {
    let (text, segments) = render_dialogue(record);
    let len = text.chars().count();
    let mut entries = Vec::with_capacity(spans.len());
    let mut previous_end = 0;
    for (index, span) in spans.iter().enumerate() {
        if span.start >= span.end || span.end > len {
            return Err(LossError::SpanOutOfRange { index, start: span.start, end: span.end, len });
        }
        if index > 0 && span.start < previous_end {
            return Err(LossError::OverlappingSpans { index, start: span.start, end: span.end });
        }
        previous_end = span.end;
        let weight = segments
            .iter()
            .find(|s| s.start <= span.start && span.start < s.end)
            .map_or(0.0, |s| s.weight);
        entries.push(MaskEntry { token_index: index, weight });
    }
    Ok(WeightMask { record_id: record.record_id.clone(), entries })
}
