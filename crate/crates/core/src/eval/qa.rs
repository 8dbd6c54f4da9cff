use serde::{Deserialize, Serialize};

use super::metrics::accuracy;
use super::EvalError;
use crate::text::{normalize, words};

/// Similarity threshold for open-ended answers.
pub const OPEN_THRESHOLD: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaKind {
    Closed,
    Open,
}

impl std::str::FromStr for QaKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "closed" => Ok(QaKind::Closed),
            "open" => Ok(QaKind::Open),
            other => Err(format!("unknown QA kind '{other}'")),
        }
    }
}

/// Semantic similarity in [0, 1] between an answer and its key.
pub trait SimilarityScorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, answer: &str, key: &str) -> Result<f64, EvalError>;
}

/// Token-level F1 over normalized words; used when no semantic scorer is configured.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenF1;

impl SimilarityScorer for TokenF1 {
    fn name(&self) -> &str {
        "token_f1 (fallback)"
    }

    fn score(&self, answer: &str, key: &str) -> Result<f64, EvalError> {
        Ok(token_f1(answer, key))
    }
}

pub fn token_f1(answer: &str, key: &str) -> f64 {
    let a = words(answer);
    let k = words(key);
    if a.is_empty() || k.is_empty() {
        return if a.is_empty() && k.is_empty() { 1.0 } else { 0.0 };
    }
    let mut remaining = k.clone();
    let mut overlap = 0usize;
    for w in &a {
        if let Some(pos) = remaining.iter().position(|r| r == w) {
            remaining.swap_remove(pos);
            overlap += 1;
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / a.len() as f64;
    let recall = overlap as f64 / k.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Exact match after normalization, or the key's words appearing as a
/// contiguous run in the answer ("B. pneumonia" answers key "B").
pub fn closed_correct(answer: &str, key: &str) -> bool {
    let (a, k) = (normalize(answer), normalize(key));
    if k.is_empty() {
        return false;
    }
    if a == k {
        return true;
    }
    let (aw, kw) = (words(answer), words(key));
    !kw.is_empty() && aw.windows(kw.len()).any(|w| w == kw.as_slice())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaResult {
    pub kind: QaKind,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// Scorer used for open-ended answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer: Option<String>,
    pub per_item: Vec<bool>,
}

pub fn qa_accuracy(
    answers: &[String],
    keys: &[String],
    kind: QaKind,
    scorer: Option<&dyn SimilarityScorer>,
) -> Result<QaResult, EvalError> {
    if answers.len() != keys.len() {
        return Err(EvalError::LengthMismatch { answers: answers.len(), keys: keys.len() });
    }
    let per_item: Vec<bool> = match kind {
        QaKind::Closed => answers.iter().zip(keys).map(|(a, k)| closed_correct(a, k)).collect(),
        QaKind::Open => {
            let scorer = scorer.ok_or(EvalError::ScorerUnavailable)?;
            answers
                .iter()
                .zip(keys)
                .map(|(a, k)| scorer.score(a, k).map(|s| s >= OPEN_THRESHOLD))
                .collect::<Result<_, _>>()?
        }
    };
    let correct = per_item.iter().filter(|c| **c).count();
    Ok(QaResult {
        kind,
        correct,
        total: per_item.len(),
        accuracy: accuracy("answers", correct, per_item.len())?,
        scorer: (kind == QaKind::Open).then(|| scorer.map(|s| s.name().to_string())).flatten(),
        per_item,
    })
}
