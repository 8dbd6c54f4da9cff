//! Dialogue synthesis: questions, answers, contrastive voting and job fan-out.

mod extract;
mod jobfile;
mod prompts;
pub mod vote;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

pub use extract::{pair_with_distractors, parse_concept_list};
pub use jobfile::{load_job_file, parse_job_file, ImageEntry, JobFile, JobFileConcept, JobFileError};
pub use vote::{majority_vote, NoCandidates};

use crate::domain::{
    has_errors, sha256_hex, validate_job, validate_triplet, ConceptSpec, DialogueTriplet, DialogueTurn, ImageRef,
    Phase, Provenance, ResponseSource, SynthesisJob, TemplateChoice, TripletFlag, Violation, VoteRecord,
};
use crate::gateway::{load_image, ChatMessage, ChatRequest, Gateway, GatewayError, LoadedImage, ModelRole, RequestPurpose};
use crate::templates::{instantiate, next_template, sample_library, QuestionTemplate, RotationState, TemplateLibrary};
use crate::text::{contains_normalized, replace_phrase};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthesisError {
    #[error("invalid job: {}", join_violations(.0))]
    InvalidJob(Vec<Violation>),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("synthesized triplet is invalid: {}", join_violations(.0))]
    InvalidTriplet(Vec<Violation>),
}

fn join_violations(violations: &[Violation]) -> String {
    violations.iter().filter(|v| v.is_error()).map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Resolves image references to bytes.
#[async_trait]
pub trait ImageProvider: Send + Sync {
    async fn load(&self, image: &ImageRef) -> Result<LoadedImage, GatewayError>;
}

/// Loads images from disk, resolving relative locators against `base_dir`.
pub struct DirImages {
    pub base_dir: PathBuf,
}

impl DirImages {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        Self { base_dir: base_dir.into() }
    }
}

#[async_trait]
impl ImageProvider for DirImages {
    async fn load(&self, image: &ImageRef) -> Result<LoadedImage, GatewayError> {
        load_image(image, &self.base_dir).await
    }
}

/// Images held in memory, keyed by digest.
#[derive(Default, Clone)]
pub struct MemoryImages(HashMap<String, LoadedImage>);

impl MemoryImages {
    pub fn new(images: impl IntoIterator<Item = LoadedImage>) -> Self {
        Self(images.into_iter().map(|i| (i.image.digest.clone(), i)).collect())
    }

    pub fn insert(&mut self, image: LoadedImage) {
        self.0.insert(image.image.digest.clone(), image);
    }
}

#[async_trait]
impl ImageProvider for MemoryImages {
    async fn load(&self, image: &ImageRef) -> Result<LoadedImage, GatewayError> {
        self.0
            .get(&image.digest)
            .cloned()
            .ok_or_else(|| GatewayError::Image(format!("no bytes for image {}", image.locator)))
    }
}

/// Derives a child seed from `base` and a path of labels.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut key = base.to_string();
    for part in parts {
        key.push('/');
        key.push_str(part);
    }
    let digest = sha256_hex(key.as_bytes());
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

pub fn record_id(job_id: &str, concept_id: &str, image_index: usize) -> String {
    format!("{job_id}-{concept_id}-{image_index:02}")
}

/// True when `question` names the unrelated knowledge and not the target.
pub fn contrastive_post_check(question: &str, target: &str, unrelated: &str) -> bool {
    contains_normalized(question, unrelated) && !contains_normalized(question, target)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastiveQuestion {
    pub text: String,
    pub by_substitution: bool,
    pub regenerated: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveAnswer {
    pub text: String,
    pub provenance: Provenance,
    pub vote: VoteRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletFailure {
    pub concept_id: String,
    pub image_index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub job_id: String,
    pub requested: usize,
    pub produced: usize,
    pub failed: usize,
    pub per_concept: BTreeMap<String, usize>,
    pub flagged: usize,
    pub vote_ties: usize,
    pub vote_non_negation: usize,
    pub contrastive_regenerated: usize,
    pub contrastive_post_check_failed: usize,
    pub calls: BTreeMap<String, usize>,
    pub failures: Vec<TripletFailure>,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobOutput {
    pub triplets: Vec<DialogueTriplet>,
    pub report: SynthesisReport,
}

/// Turns concept specs into dialogue triplets through a gateway.
pub struct Engine {
    gateway: Arc<Gateway>,
    templates: Arc<TemplateLibrary>,
    images: Arc<dyn ImageProvider>,
}

impl Engine {
    pub fn new(gateway: Arc<Gateway>, images: Arc<dyn ImageProvider>) -> Self {
        Self { gateway, templates: Arc::new(sample_library()), images }
    }

    pub fn with_templates(mut self, templates: TemplateLibrary) -> Self {
        self.templates = Arc::new(templates);
        self
    }

    pub fn templates(&self) -> &TemplateLibrary {
        &self.templates
    }

    /// Step-level access for one job's parameters.
    pub fn context<'a>(&'a self, job: &'a SynthesisJob) -> JobContext<'a> {
        JobContext {
            gateway: &self.gateway,
            job,
            limiter: Semaphore::new(job.max_concurrency.max(1)),
            calls: Mutex::new(BTreeMap::new()),
        }
    }

    /// Runs a whole job. Per-triplet failures are reported, not raised.
    pub async fn run_job(&self, job: &SynthesisJob) -> Result<JobOutput, SynthesisError> {
        let violations = validate_job(job);
        if has_errors(&violations) {
            return Err(SynthesisError::InvalidJob(violations));
        }
        let started = Instant::now();
        let created_at = job.created_at.unwrap_or_else(Utc::now);
        let ctx = self.context(job);

        // Templates are assigned up front in (concept, image) order so the
        // outcome does not depend on completion order.
        let mut rotation = RotationState::for_library(job.seed, &self.templates);
        let mut plan = Vec::new();
        for concept in &job.concepts {
            for (index, image) in concept.images.iter().enumerate() {
                let template = if concept.category.uses_templates() {
                    let (template, next) = next_template(&rotation, &self.templates);
                    rotation = next;
                    Some(template)
                } else {
                    None
                };
                plan.push((concept, index, image, template));
            }
        }

        let tasks = plan.iter().map(|&(concept, index, image, template)| {
            let ctx = &ctx;
            async move {
                let loaded = self.images.load(image).await?;
                ctx.synthesize_triplet(concept, index, &loaded, template, created_at).await
            }
        });
        let results = futures::future::join_all(tasks).await;

        let mut report = SynthesisReport { job_id: job.job_id.clone(), requested: plan.len(), ..Default::default() };
        let mut triplets = Vec::new();
        for ((concept, index, _, _), result) in plan.iter().zip(results) {
            match result {
                Ok(outcome) => {
                    let t = outcome.triplet;
                    *report.per_concept.entry(t.concept_id.clone()).or_insert(0) += 1;
                    report.flagged += usize::from(t.is_flagged());
                    report.vote_ties += usize::from(t.flags.contains(&TripletFlag::VoteTie));
                    report.vote_non_negation += usize::from(t.flags.contains(&TripletFlag::VoteNonNegation));
                    report.contrastive_post_check_failed +=
                        usize::from(t.flags.contains(&TripletFlag::ContrastivePostCheckFailed));
                    report.contrastive_regenerated += usize::from(outcome.contrastive_regenerated);
                    triplets.push(t);
                }
                Err(e) => {
                    tracing::warn!(concept = %concept.id, index, error = %e, "triplet failed");
                    report.failures.push(TripletFailure {
                        concept_id: concept.id.clone(),
                        image_index: *index,
                        error: e.to_string(),
                    });
                }
            }
        }
        report.produced = triplets.len();
        report.failed = report.failures.len();
        report.calls = ctx.calls.lock().iter().map(|(k, v)| (k.to_string(), *v)).collect();
        report.wall_time_ms = started.elapsed().as_millis() as u64;
        Ok(JobOutput { triplets, report })
    }

    /// Asks the synthesizer for the key concepts in `text`.
    pub async fn extract_concepts(&self, text: &str) -> Result<Vec<String>, SynthesisError> {
        let request = ChatRequest::new(
            ModelRole::Synthesizer,
            RequestPurpose::ConceptExtraction,
            vec![ChatMessage::user(prompts::concept_extraction(text))],
        )
        .temperature(0.0);
        let response = self.gateway.complete(&request).await?;
        Ok(parse_concept_list(&response.text))
    }
}

pub struct TripletOutcome {
    pub triplet: DialogueTriplet,
    pub contrastive_regenerated: bool,
}

/// One job's parameters plus a bound on in-flight gateway calls.
pub struct JobContext<'a> {
    gateway: &'a Gateway,
    job: &'a SynthesisJob,
    limiter: Semaphore,
    calls: Mutex<BTreeMap<ModelRole, usize>>,
}

fn role_for(source: ResponseSource) -> (ModelRole, Provenance) {
    match source {
        ResponseSource::Base => (ModelRole::Base, Provenance::BaseModel),
        ResponseSource::Synthesizer => (ModelRole::Synthesizer, Provenance::SynthesisModel),
    }
}

impl JobContext<'_> {
    fn request(
        &self,
        concept: &ConceptSpec,
        role: ModelRole,
        purpose: RequestPurpose,
        messages: Vec<ChatMessage>,
        temperature: f64,
        seed: u64,
    ) -> ChatRequest {
        ChatRequest::new(role, purpose, messages)
            .temperature(temperature)
            .seed(seed)
            .max_tokens(self.job.max_tokens)
            .label("concept", concept.id.clone())
            .label("target", concept.target_knowledge.clone())
            .label("unrelated", concept.unrelated_knowledge.clone())
    }

    async fn call(&self, request: ChatRequest) -> Result<String, GatewayError> {
        let _permit = self.limiter.acquire().await.expect("limiter is never closed");
        *self.calls.lock().entry(request.role).or_insert(0) += 1;
        let response = self.gateway.complete(&request).await?;
        Ok(response.text.trim().to_string())
    }

    pub async fn caption_question(
        &self,
        concept: &ConceptSpec,
        image: &LoadedImage,
        seed: u64,
    ) -> Result<String, SynthesisError> {
        let messages = vec![ChatMessage::user_with_image(prompts::caption_question(), image.clone())];
        let request = self.request(
            concept,
            ModelRole::Synthesizer,
            RequestPurpose::CaptionQuestion,
            messages,
            self.job.temperatures.question,
            seed,
        );
        Ok(self.call(request).await?)
    }

    /// Instantiates `template` for template-driven categories; otherwise asks
    /// the synthesizer for a domain question.
    pub async fn target_question(
        &self,
        concept: &ConceptSpec,
        image: &LoadedImage,
        template: Option<&QuestionTemplate>,
        seed: u64,
    ) -> Result<String, SynthesisError> {
        if concept.category.uses_templates() {
            let template = template.ok_or_else(|| {
                SynthesisError::Precondition(format!("concept '{}' needs a question template", concept.id))
            })?;
            return Ok(instantiate(template, &concept.target_knowledge));
        }
        let messages = vec![ChatMessage::user_with_image(prompts::domain_target_question(concept), image.clone())];
        let request = self.request(
            concept,
            ModelRole::Synthesizer,
            RequestPurpose::TargetQuestion,
            messages,
            self.job.temperatures.question,
            seed,
        );
        Ok(self.call(request).await?)
    }

    /// Derives the contrastive question from `q3`, by substitution when `q3`
    /// came from a template. A failed post-check gets one regeneration.
    pub async fn contrastive_question(
        &self,
        concept: &ConceptSpec,
        image: &LoadedImage,
        q3: &str,
        by_substitution: bool,
        seed: u64,
    ) -> Result<ContrastiveQuestion, SynthesisError> {
        let (target, unrelated) = (&concept.target_knowledge, &concept.unrelated_knowledge);
        let mut attempt = 0usize;
        let mut text = if by_substitution {
            replace_phrase(q3, target.trim(), unrelated.trim())
        } else {
            attempt += 1;
            self.synthesized_contrastive(concept, image, q3, seed, 0).await?
        };
        if contrastive_post_check(&text, target, unrelated) {
            return Ok(ContrastiveQuestion { text, by_substitution, regenerated: false, passed: true });
        }
        text = self.synthesized_contrastive(concept, image, q3, seed, attempt).await?;
        let passed = contrastive_post_check(&text, target, unrelated);
        if !passed {
            tracing::warn!(concept = %concept.id, "contrastive question failed its post-check twice");
        }
        Ok(ContrastiveQuestion { text, by_substitution: false, regenerated: true, passed })
    }

    async fn synthesized_contrastive(
        &self,
        concept: &ConceptSpec,
        image: &LoadedImage,
        q3: &str,
        seed: u64,
        attempt: usize,
    ) -> Result<String, SynthesisError> {
        let prompt = prompts::contrastive_question(q3, &concept.target_knowledge, &concept.unrelated_knowledge);
        let request = self
            .request(
                concept,
                ModelRole::Synthesizer,
                RequestPurpose::ContrastiveQuestion,
                vec![ChatMessage::user_with_image(prompt, image.clone())],
                self.job.temperatures.question,
                derive_seed(seed, &["attempt", &attempt.to_string()]),
            )
            .sample(attempt);
        Ok(self.call(request).await?)
    }

    pub async fn caption_answer(
        &self,
        concept: &ConceptSpec,
        image: &LoadedImage,
        q1: &str,
        seed: u64,
    ) -> Result<(String, Provenance), SynthesisError> {
        let (role, provenance) = role_for(self.job.response_source.caption);
        let request = self.request(
            concept,
            role,
            RequestPurpose::CaptionAnswer,
            vec![ChatMessage::user_with_image(q1, image.clone())],
            self.job.temperatures.caption,
            seed,
        );
        Ok((self.call(request).await?, provenance))
    }

    /// Draws `vote_m` answers to `q2` after the caption turn and keeps the
    /// majority-vote winner.
    pub async fn contrastive_answer(
        &self,
        concept: &ConceptSpec,
        image: &LoadedImage,
        caption: &DialogueTurn,
        q2: &str,
        seed: u64,
    ) -> Result<ContrastiveAnswer, SynthesisError> {
        let (role, source_provenance) = role_for(self.job.response_source.contrastive);
        let messages = vec![
            ChatMessage::user_with_image(caption.question.clone(), image.clone()),
            ChatMessage::assistant(caption.answer.clone()),
            ChatMessage::user(q2),
        ];
        let draws = (0..self.job.vote_m).map(|j| {
            let request = self
                .request(
                    concept,
                    role,
                    RequestPurpose::ContrastiveAnswer,
                    messages.clone(),
                    self.job.temperatures.contrastive,
                    derive_seed(seed, &["draw", &j.to_string()]),
                )
                .sample(j);
            self.call(request)
        });
        let candidates = futures::future::try_join_all(draws).await?;
        let (text, vote) = majority_vote(candidates)
            .map_err(|e| SynthesisError::Precondition(e.to_string()))?;
        let provenance = if vote.m > 1 { Provenance::MajorityVote } else { source_provenance };
        Ok(ContrastiveAnswer { text, provenance, vote })
    }

    /// Answers `q3` with the caption and contrastive turns as context.
    pub async fn target_answer(
        &self,
        concept: &ConceptSpec,
        image: &LoadedImage,
        q3: &str,
        prior: &[DialogueTurn],
        seed: u64,
    ) -> Result<(String, Provenance), SynthesisError> {
        let phases: Vec<Phase> = prior.iter().map(|t| t.phase).collect();
        if phases != [Phase::Caption, Phase::Contrastive] {
            return Err(SynthesisError::Precondition(format!(
                "target answer needs the caption and contrastive turns as context, got {phases:?}"
            )));
        }
        let (role, provenance) = role_for(self.job.response_source.target);
        let mut messages = Vec::with_capacity(5);
        for (i, turn) in prior.iter().enumerate() {
            messages.push(if i == 0 {
                ChatMessage::user_with_image(turn.question.clone(), image.clone())
            } else {
                ChatMessage::user(turn.question.clone())
            });
            messages.push(ChatMessage::assistant(turn.answer.clone()));
        }
        messages.push(ChatMessage::user(prompts::target_answer(q3, concept)));
        let request =
            self.request(concept, role, RequestPurpose::TargetAnswer, messages, self.job.temperatures.target, seed);
        Ok((self.call(request).await?, provenance))
    }

    /// Builds one full triplet for image `index` of `concept`.
    pub async fn synthesize_triplet(
        &self,
        concept: &ConceptSpec,
        index: usize,
        image: &LoadedImage,
        template: Option<&QuestionTemplate>,
        created_at: DateTime<Utc>,
    ) -> Result<TripletOutcome, SynthesisError> {
        let job = self.job;
        let seed = derive_seed(job.seed, &[&concept.id, &index.to_string()]);
        let step = |name: &str| derive_seed(seed, &[name]);
        let weights = &job.weights;

        let q1 = self.caption_question(concept, image, step("caption_question")).await?;
        let q3 = self.target_question(concept, image, template, step("target_question")).await?;
        let q2 = self
            .contrastive_question(concept, image, &q3, concept.category.uses_templates(), step("contrastive_question"))
            .await?;

        let (a1, p1) = self.caption_answer(concept, image, &q1, step("caption_answer")).await?;
        let caption = DialogueTurn {
            phase: Phase::Caption,
            question: q1,
            answer: a1,
            answer_provenance: p1,
            loss_weight: weights.alpha1,
        };
        let a2 = self.contrastive_answer(concept, image, &caption, &q2.text, step("contrastive_answer")).await?;
        let contrastive = DialogueTurn {
            phase: Phase::Contrastive,
            question: q2.text.clone(),
            answer: a2.text,
            answer_provenance: a2.provenance,
            loss_weight: weights.alpha2,
        };
        let prior = [caption, contrastive];
        let (a3, p3) = self.target_answer(concept, image, &q3, &prior, step("target_answer")).await?;
        let [caption, contrastive] = prior;
        let target = DialogueTurn {
            phase: Phase::Target,
            question: q3,
            answer: a3,
            answer_provenance: p3,
            loss_weight: weights.alpha3,
        };

        let mut triplet = DialogueTriplet {
            record_id: record_id(&job.job_id, &concept.id, index),
            concept_id: concept.id.clone(),
            category: concept.category,
            target_knowledge: concept.target_knowledge.clone(),
            unrelated_knowledge: concept.unrelated_knowledge.clone(),
            image: image.image.clone(),
            turns: vec![caption, contrastive, target],
            seed,
            templates: TemplateChoice {
                target_template_index: template.filter(|_| concept.category.uses_templates()).map(|t| t.index),
                contrastive_by_substitution: q2.by_substitution,
            },
            vote: None,
            flags: Vec::new(),
            created_at,
        };
        if !q2.passed {
            triplet.add_flag(TripletFlag::ContrastivePostCheckFailed);
        }
        if a2.vote.tie_flag {
            triplet.add_flag(TripletFlag::VoteTie);
        }
        if a2.vote.winner_bucket != crate::domain::Bucket::Negation {
            triplet.add_flag(TripletFlag::VoteNonNegation);
        }
        triplet.vote = Some(a2.vote);

        let violations = validate_triplet(&triplet, Some(weights));
        if has_errors(&violations) {
            return Err(SynthesisError::InvalidTriplet(violations));
        }
        Ok(TripletOutcome { triplet, contrastive_regenerated: q2.regenerated })
    }
}

#[cfg(test)]
mod tests;
