//! Shared domain types and their validation. No I/O lives here.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scalar::Scalar;
use crate::text::{contains_normalized, normalize};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    PersonalizedEntity,
    AbstractConcept,
    DomainExpertise,
}

impl Category {
    /// Personalized entities and abstract concepts use the question-template
    /// library; domain expertise questions come from the synthesizer.
    pub fn uses_templates(self) -> bool {
        !matches!(self, Category::DomainExpertise)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaType {
    Jpeg,
    Png,
    Webp,
}

impl MediaType {
    pub fn mime(self) -> &'static str {
        match self {
            MediaType::Jpeg => "image/jpeg",
            MediaType::Png => "image/png",
            MediaType::Webp => "image/webp",
        }
    }

    pub fn from_path(path: &str) -> Option<Self> {
        let ext = path.rsplit('.').next()?.to_ascii_lowercase();
        match ext.as_str() {
            "jpg" | "jpeg" => Some(MediaType::Jpeg),
            "png" => Some(MediaType::Png),
            "webp" => Some(MediaType::Webp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub locator: String,
    pub media_type: MediaType,
    pub digest: String,
}

impl ImageRef {
    /// Builds a reference whose digest is computed from `bytes`.
    pub fn from_bytes(locator: impl Into<String>, media_type: MediaType, bytes: &[u8]) -> Self {
        Self { locator: locator.into(), media_type, digest: sha256_hex(bytes) }
    }

    pub fn digest_is_well_formed(&self) -> bool {
        self.digest.len() == 64 && self.digest.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
    }

    pub fn matches_bytes(&self, bytes: &[u8]) -> bool {
        self.digest == sha256_hex(bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub id: String,
    pub category: Category,
    pub target_knowledge: String,
    pub unrelated_knowledge: String,
    pub images: Vec<ImageRef>,
    /// Target domain for domain-expertise concepts, e.g. "medicine".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    /// Contextual description passed to the target-answer prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Caption,
    Contrastive,
    Target,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Caption, Phase::Contrastive, Phase::Target];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Caption => "caption",
            Phase::Contrastive => "contrastive",
            Phase::Target => "target",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "caption" => Ok(Phase::Caption),
            "contrastive" => Ok(Phase::Contrastive),
            "target" => Ok(Phase::Target),
            other => Err(format!("unknown phase '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    BaseModel,
    SynthesisModel,
    MajorityVote,
    HumanEdit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub phase: Phase,
    pub question: String,
    pub answer: String,
    pub answer_provenance: Provenance,
    pub loss_weight: f64,
}

/// Per-turn loss coefficients `(caption, contrastive, target)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnWeights<S = f64> {
    pub alpha1: S,
    pub alpha2: S,
    pub alpha3: S,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WeightsError {
    #[error("turn weights must each be > 0, got {0}")]
    NonPositive(String),
    #[error("turn weights must sum to 1, got {0}")]
    BadSum(String),
}

impl<S: Scalar> TurnWeights<S> {
    pub fn new(alpha1: S, alpha2: S, alpha3: S) -> Result<Self, WeightsError> {
        let weights = Self { alpha1, alpha2, alpha3 };
        weights.check()?;
        Ok(weights)
    }

    /// Builds weights without the positivity and sum checks. Only the
    /// component-isolation tests of the loss kernel need this.
    pub fn unchecked(alpha1: S, alpha2: S, alpha3: S) -> Self {
        Self { alpha1, alpha2, alpha3 }
    }

    /// The shipped default, `(0.2, 0.3, 0.5)`, built exactly in `S`.
    pub fn default_split() -> Self {
        Self {
            alpha1: S::from_counts(2, 10),
            alpha2: S::from_counts(3, 10),
            alpha3: S::from_counts(5, 10),
        }
    }

    pub fn check(&self) -> Result<(), WeightsError> {
        let zero = S::zero();
        if !(self.alpha1 > zero && self.alpha2 > zero && self.alpha3 > zero) {
            return Err(WeightsError::NonPositive(format!("{:?}", self.as_array())));
        }
        let sum = self.alpha1 + self.alpha2 + self.alpha3;
        if sum.abs_diff(S::one()) > S::sum_tolerance() {
            return Err(WeightsError::BadSum(format!("{sum:?}")));
        }
        Ok(())
    }

    pub fn for_phase(&self, phase: Phase) -> S {
        match phase {
            Phase::Caption => self.alpha1,
            Phase::Contrastive => self.alpha2,
            Phase::Target => self.alpha3,
        }
    }

    pub fn as_array(&self) -> [S; 3] {
        [self.alpha1, self.alpha2, self.alpha3]
    }
}

impl Default for TurnWeights<f64> {
    fn default() -> Self {
        Self { alpha1: 0.2, alpha2: 0.3, alpha3: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Negation,
    Affirmation,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub m: usize,
    pub candidates: Vec<String>,
    pub buckets: Vec<Bucket>,
    pub winner_bucket: Bucket,
    pub winner_index: usize,
    pub tie_flag: bool,
}

impl VoteRecord {
    pub fn bucket_count(&self, bucket: Bucket) -> usize {
        self.buckets.iter().filter(|b| **b == bucket).count()
    }

    /// Checks the record's internal consistency.
    pub fn is_consistent(&self) -> bool {
        if self.m == 0 || self.candidates.len() != self.m || self.buckets.len() != self.m {
            return false;
        }
        if self.winner_index >= self.m || self.buckets[self.winner_index] != self.winner_bucket {
            return false;
        }
        let winner = self.bucket_count(self.winner_bucket);
        let dominates = [Bucket::Negation, Bucket::Affirmation, Bucket::Other]
            .into_iter()
            .all(|b| self.bucket_count(b) <= winner);
        dominates || self.tie_flag
    }
}

/// Reasons a triplet is routed to a human reviewer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripletFlag {
    /// Two or more stance buckets tied for the contrastive vote.
    VoteTie,
    /// The contrastive vote was won by a non-negating answer.
    VoteNonNegation,
    /// The contrastive question still failed its post-check after regeneration.
    ContrastivePostCheckFailed,
}

/// How the target and contrastive questions were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TemplateChoice {
    /// 1-based library index of the target-question template, when one was used.
    pub target_template_index: Option<usize>,
    /// True when the contrastive question is a direct substitution of the target one.
    pub contrastive_by_substitution: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTriplet {
    pub record_id: String,
    pub concept_id: String,
    pub category: Category,
    pub target_knowledge: String,
    pub unrelated_knowledge: String,
    pub image: ImageRef,
    pub turns: Vec<DialogueTurn>,
    pub seed: u64,
    pub templates: TemplateChoice,
    pub vote: Option<VoteRecord>,
    #[serde(default)]
    pub flags: Vec<TripletFlag>,
    pub created_at: DateTime<Utc>,
}

impl DialogueTriplet {
    pub fn turn(&self, phase: Phase) -> Option<&DialogueTurn> {
        self.turns.iter().find(|t| t.phase == phase)
    }

    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }

    pub fn add_flag(&mut self, flag: TripletFlag) {
        if !self.flags.contains(&flag) {
            self.flags.push(flag);
            self.flags.sort();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseSource {
    Base,
    Synthesizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseSources {
    pub caption: ResponseSource,
    pub contrastive: ResponseSource,
    pub target: ResponseSource,
}

impl Default for ResponseSources {
    fn default() -> Self {
        Self {
            caption: ResponseSource::Base,
            contrastive: ResponseSource::Base,
            target: ResponseSource::Synthesizer,
        }
    }
}

impl ResponseSources {
    /// The "without substitution" ablation: every answer comes from the synthesizer.
    pub fn synthesizer_only() -> Self {
        Self {
            caption: ResponseSource::Synthesizer,
            contrastive: ResponseSource::Synthesizer,
            target: ResponseSource::Synthesizer,
        }
    }

    pub fn for_phase(&self, phase: Phase) -> ResponseSource {
        match phase {
            Phase::Caption => self.caption,
            Phase::Contrastive => self.contrastive,
            Phase::Target => self.target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureMode {
    #[default]
    Full,
    CaptionTarget,
    TargetOnly,
}

impl StructureMode {
    pub fn phases(self) -> &'static [Phase] {
        match self {
            StructureMode::Full => &Phase::ALL,
            StructureMode::CaptionTarget => &[Phase::Caption, Phase::Target],
            StructureMode::TargetOnly => &[Phase::Target],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StructureMode::Full => "full",
            StructureMode::CaptionTarget => "caption_target",
            StructureMode::TargetOnly => "target_only",
        }
    }
}

impl std::str::FromStr for StructureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(StructureMode::Full),
            "caption_target" | "caption-target" => Ok(StructureMode::CaptionTarget),
            "target_only" | "target-only" => Ok(StructureMode::TargetOnly),
            other => Err(format!("unknown structure mode '{other}'")),
        }
    }
}

/// Sampling temperatures per generation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Temperatures {
    pub caption: f64,
    pub contrastive: f64,
    pub target: f64,
    pub question: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Self { caption: 0.2, contrastive: 0.7, target: 0.2, question: 0.2 }
    }
}

fn default_vote_m() -> usize {
    3
}

fn default_concurrency() -> usize {
    4
}

fn default_max_tokens() -> u32 {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisJob {
    pub job_id: String,
    pub concepts: Vec<ConceptSpec>,
    #[serde(default = "default_vote_m")]
    pub vote_m: usize,
    #[serde(default)]
    pub response_source: ResponseSources,
    #[serde(default)]
    pub structure_mode: StructureMode,
    #[serde(default)]
    pub weights: TurnWeights<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub temperatures: Temperatures,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Timestamp stamped on every triplet; the current time when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<DateTime<Utc>>,
}

impl SynthesisJob {
    pub fn new(job_id: impl Into<String>, concepts: Vec<ConceptSpec>) -> Self {
        Self {
            job_id: job_id.into(),
            concepts,
            vote_m: default_vote_m(),
            response_source: ResponseSources::default(),
            structure_mode: StructureMode::Full,
            weights: TurnWeights::default(),
            seed: 0,
            max_concurrency: default_concurrency(),
            temperatures: Temperatures::default(),
            max_tokens: default_max_tokens(),
            created_at: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// One broken rule, naming the field and the rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
    pub severity: Severity,
}

impl Violation {
    pub fn error(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self { field: field.into(), rule: rule.into(), severity: Severity::Error }
    }

    pub fn warning(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self { field: field.into(), rule: rule.into(), severity: Severity::Warning }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}: {}", self.field, self.rule)
    }
}

pub fn has_errors(violations: &[Violation]) -> bool {
    violations.iter().any(Violation::is_error)
}

pub fn validate_concept_spec(spec: &ConceptSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    if spec.id.trim().is_empty() {
        out.push(Violation::error("id", "must be non-empty"));
    }
    let target = normalize(&spec.target_knowledge);
    let unrelated = normalize(&spec.unrelated_knowledge);
    if target.is_empty() {
        out.push(Violation::error("target_knowledge", "must be non-empty"));
    }
    if unrelated.is_empty() {
        out.push(Violation::error("unrelated_knowledge", "must be non-empty"));
    }
    for (field, value) in [("target_knowledge", &spec.target_knowledge), ("unrelated_knowledge", &spec.unrelated_knowledge)] {
        if value.contains(crate::templates::PLACEHOLDER) {
            out.push(Violation::error(field, "must not contain the [TARGET] placeholder"));
        }
    }
    if !target.is_empty() && target == unrelated {
        out.push(Violation::error("unrelated_knowledge", "target equals unrelated after normalization"));
    }
    if spec.images.is_empty() {
        out.push(Violation::error("images", "at least one image is required"));
    } else if !(3..=5).contains(&spec.images.len()) {
        out.push(Violation::warning(
            "images",
            format!("image count outside 3-5 (got {})", spec.images.len()),
        ));
    }
    let mut seen = HashSet::new();
    for (i, image) in spec.images.iter().enumerate() {
        if image.locator.trim().is_empty() {
            out.push(Violation::error(format!("images[{i}].locator"), "must be non-empty"));
        }
        if !image.digest_is_well_formed() {
            out.push(Violation::error(format!("images[{i}].digest"), "must be 64 lowercase hex characters"));
        } else if !seen.insert(image.digest.as_str()) {
            out.push(Violation::warning(format!("images[{i}].digest"), "duplicate image within concept"));
        }
    }
    out
}

pub fn validate_job(job: &SynthesisJob) -> Vec<Violation> {
    let mut out = Vec::new();
    if job.job_id.trim().is_empty() {
        out.push(Violation::error("job_id", "must be non-empty"));
    }
    if job.vote_m == 0 {
        out.push(Violation::error("vote_m", "must be >= 1"));
    }
    if job.max_concurrency == 0 {
        out.push(Violation::error("max_concurrency", "must be >= 1"));
    }
    if let Err(e) = job.weights.check() {
        out.push(Violation::error("weights", e.to_string()));
    }
    let mut ids = HashSet::new();
    for (i, concept) in job.concepts.iter().enumerate() {
        if !ids.insert(concept.id.as_str()) {
            out.push(Violation::error(format!("concepts[{i}].id"), format!("duplicate concept id '{}'", concept.id)));
        }
        for v in validate_concept_spec(concept) {
            out.push(Violation { field: format!("concepts[{i}].{}", v.field), ..v });
        }
    }
    out
}

/// Validates a triplet. `weights`, when given, must match every turn's loss weight.
pub fn validate_triplet(triplet: &DialogueTriplet, weights: Option<&TurnWeights<f64>>) -> Vec<Violation> {
    let mut out = Vec::new();
    let phases: Vec<Phase> = triplet.turns.iter().map(|t| t.phase).collect();
    if phases != Phase::ALL {
        out.push(Violation::error("turns", format!("phases must be [caption, contrastive, target], got {phases:?}")));
    }
    for turn in &triplet.turns {
        let field = format!("turns.{}", turn.phase);
        if turn.question.trim().is_empty() {
            out.push(Violation::error(format!("{field}.question"), "must be non-empty"));
        }
        if turn.answer.trim().is_empty() {
            out.push(Violation::error(format!("{field}.answer"), "must be non-empty"));
        }
        if !(turn.loss_weight > 0.0 && turn.loss_weight <= 1.0) {
            out.push(Violation::error(format!("{field}.loss_weight"), "must be in (0, 1]"));
        }
        if let Some(w) = weights {
            if (turn.loss_weight - w.for_phase(turn.phase)).abs() > 1e-12 {
                out.push(Violation::error(format!("{field}.loss_weight"), "does not match the job weights"));
            }
        }
        if turn.question.contains("[TARGET]") {
            out.push(Violation::error(format!("{field}.question"), "residual [TARGET] placeholder"));
        }
    }
    if let Some(q2) = triplet.turn(Phase::Contrastive).map(|t| t.question.as_str()) {
        let waived = triplet.flags.contains(&TripletFlag::ContrastivePostCheckFailed);
        let make = |rule: &str| {
            if waived {
                Violation::warning("turns.contrastive.question", rule)
            } else {
                Violation::error("turns.contrastive.question", rule)
            }
        };
        if !contains_normalized(q2, &triplet.unrelated_knowledge) {
            out.push(make("must contain the unrelated knowledge"));
        }
        if contains_normalized(q2, &triplet.target_knowledge) {
            out.push(make("contrastive leak: contains the target knowledge"));
        }
    }
    if let Some(vote) = &triplet.vote {
        if !vote.is_consistent() {
            out.push(Violation::error("vote", "inconsistent vote record"));
        }
    }
    if !triplet.image.digest_is_well_formed() {
        out.push(Violation::error("image.digest", "must be 64 lowercase hex characters"));
    }
    out
}

/// Counts per key, in key order.
pub fn count_by<'a, I>(keys: I) -> BTreeMap<String, usize>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts = BTreeMap::new();
    for key in keys {
        *counts.entry(key.to_string()).or_insert(0) += 1;
    }
    counts
}
