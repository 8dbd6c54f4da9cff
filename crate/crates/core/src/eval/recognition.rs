use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use super::metrics::{accuracy, weighted_accuracy, MetricError};
use crate::domain::ImageRef;
use crate::gateway::{ChatMessage, ChatRequest, Gateway, ModelRole, RequestPurpose};
use crate::stance::{normalize_yes_no, Stance};
use crate::synthesis::ImageProvider;
use crate::templates::{instantiate, TemplateLibrary};

fn default_template() -> usize {
    1
}

/// Recognition probes for one concept. Positives contain the concept;
/// negatives are distractor images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSet {
    pub concept_id: String,
    pub target_knowledge: String,
    pub positives: Vec<ImageRef>,
    pub negatives: Vec<ImageRef>,
    /// 1-based index into the question template library.
    #[serde(default = "default_template")]
    pub template_index: usize,
}

impl ProbeSet {
    /// Expected stance per probe, positives first.
    pub fn probes(&self) -> impl Iterator<Item = (&ImageRef, Stance)> {
        self.positives
            .iter()
            .map(|i| (i, Stance::Positive))
            .chain(self.negatives.iter().map(|i| (i, Stance::Negative)))
    }

    pub fn validate(&self, templates: &TemplateLibrary) -> Result<(), EvalError> {
        if self.positives.is_empty() || self.negatives.is_empty() {
            return Err(EvalError::InvalidProbeSet("needs at least one positive and one negative".into()));
        }
        if let Some(shared) = self.positives.iter().find(|p| self.negatives.iter().any(|n| n.digest == p.digest)) {
            return Err(EvalError::InvalidProbeSet(format!("image {} is both positive and negative", shared.digest)));
        }
        if templates.get(self.template_index).is_none() {
            return Err(EvalError::InvalidProbeSet(format!(
                "template index {} outside 1..={}",
                self.template_index,
                templates.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("invalid probe set: {0}")]
    InvalidProbeSet(String),
    #[error("answers and keys differ in length ({answers} vs {keys})")]
    LengthMismatch { answers: usize, keys: usize },
    #[error("open-ended scoring needs a similarity scorer")]
    ScorerUnavailable,
    #[error("scorer failed: {0}")]
    Scorer(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("malformed input: {0}")]
    Input(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub image_digest: String,
    pub expected: Stance,
    pub observed: Stance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionResult {
    pub concept_id: String,
    pub pos_correct: usize,
    pub pos_total: usize,
    pub neg_correct: usize,
    pub neg_total: usize,
    pub unknown: usize,
    pub errors: usize,
    pub pos_acc: f64,
    pub neg_acc: f64,
    pub weighted_acc: f64,
    pub outcomes: Vec<ProbeOutcome>,
}

impl RecognitionResult {
    pub fn from_outcomes(concept_id: &str, outcomes: Vec<ProbeOutcome>) -> Result<Self, EvalError> {
        let count = |expected: Stance, correct: bool| {
            outcomes.iter().filter(|o| o.expected == expected && (!correct || o.observed == expected)).count()
        };
        let (pos_total, neg_total) = (count(Stance::Positive, false), count(Stance::Negative, false));
        let (pos_correct, neg_correct) = (count(Stance::Positive, true), count(Stance::Negative, true));
        let pos_acc: f64 = accuracy("positives", pos_correct, pos_total)?;
        let neg_acc: f64 = accuracy("negatives", neg_correct, neg_total)?;
        Ok(Self {
            concept_id: concept_id.to_string(),
            pos_correct,
            pos_total,
            neg_correct,
            neg_total,
            unknown: outcomes.iter().filter(|o| o.observed == Stance::Unknown).count(),
            errors: outcomes.iter().filter(|o| o.error.is_some()).count(),
            pos_acc,
            neg_acc,
            weighted_acc: weighted_accuracy(pos_acc, neg_acc),
            outcomes,
        })
    }
}

/// Asks `role` the probe question about every image and scores the stances.
/// Gateway or image failures count as unknown answers.
pub async fn recognition_eval(
    probes: &ProbeSet,
    gateway: &Gateway,
    images: &dyn ImageProvider,
    templates: &TemplateLibrary,
    role: ModelRole,
    max_concurrency: usize,
) -> Result<RecognitionResult, EvalError> {
    probes.validate(templates)?;
    let template = templates.get(probes.template_index).expect("validated");
    let question = instantiate(template, &probes.target_knowledge);
    let limiter = Arc::new(Semaphore::new(max_concurrency.max(1)));
    let tasks = probes.probes().enumerate().map(|(i, (image, expected))| {
        let (limiter, question) = (limiter.clone(), question.clone());
        async move {
            let _permit = limiter.acquire().await.expect("limiter is never closed");
            let (kind, index) = match expected {
                Stance::Positive => ("pos", i),
                _ => ("neg", i - probes.positives.len()),
            };
            let answer = match images.load(image).await {
                Ok(loaded) => {
                    let request = ChatRequest::new(
                        role,
                        RequestPurpose::RecognitionProbe,
                        vec![ChatMessage::user_with_image(question, loaded)],
                    )
                    .temperature(0.0)
                    .label("concept", probes.concept_id.clone())
                    .label("target", probes.target_knowledge.clone())
                    .label("probe", format!("{kind}-{index}"));
                    gateway.complete(&request).await.map(|r| r.text)
                }
                Err(e) => Err(e),
            };
            match answer {
                Ok(text) => ProbeOutcome {
                    image_digest: image.digest.clone(),
                    expected,
                    observed: normalize_yes_no(&text),
                    error: None,
                },
                Err(e) => ProbeOutcome {
                    image_digest: image.digest.clone(),
                    expected,
                    observed: Stance::Unknown,
                    error: Some(e.to_string()),
                },
            }
        }
    });
    let outcomes = futures::future::join_all(tasks).await;
    RecognitionResult::from_outcomes(&probes.concept_id, outcomes)
}
