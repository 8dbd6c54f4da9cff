use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{
    Bucket, Category, DialogueTriplet, MediaType, Phase, Provenance, StructureMode, TripletFlag, VoteRecord,
};

pub const SCHEMA_VERSION: &str = "sdft/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    Approved,
    Rejected,
    Edited,
}

impl ReviewStatus {
    /// Approved and edited records are the ones that reach training data.
    pub fn is_exportable(self) -> bool {
        matches!(self, ReviewStatus::Approved | ReviewStatus::Edited)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ReviewStatus::Pending => "pending",
            ReviewStatus::Approved => "approved",
            ReviewStatus::Rejected => "rejected",
            ReviewStatus::Edited => "edited",
        }
    }
}

impl std::str::FromStr for ReviewStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(ReviewStatus::Pending),
            "approved" => Ok(ReviewStatus::Approved),
            "rejected" => Ok(ReviewStatus::Rejected),
            "edited" => Ok(ReviewStatus::Edited),
            other => Err(format!("unknown review status '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordImage {
    pub digest: String,
    pub locator: String,
    pub media_type: MediaType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordConcept {
    pub id: String,
    pub target: String,
    pub unrelated: String,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordTurn {
    pub phase: Phase,
    pub question: String,
    pub answer: String,
    pub loss_weight: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketCounts {
    pub negation: usize,
    pub affirmation: usize,
    pub other: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteSummary {
    pub m: usize,
    pub winner_bucket: Bucket,
    pub winner_index: usize,
    pub tie: bool,
    pub counts: BucketCounts,
}

impl From<&VoteRecord> for VoteSummary {
    fn from(vote: &VoteRecord) -> Self {
        Self {
            m: vote.m,
            winner_bucket: vote.winner_bucket,
            winner_index: vote.winner_index,
            tie: vote.tie_flag,
            counts: BucketCounts {
                negation: vote.bucket_count(Bucket::Negation),
                affirmation: vote.bucket_count(Bucket::Affirmation),
                other: vote.bucket_count(Bucket::Other),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisInfo {
    pub seed: u64,
    pub template_index: Option<usize>,
    pub vote: Option<VoteSummary>,
    pub flags: Vec<TripletFlag>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewInfo {
    pub status: ReviewStatus,
    pub reviewer: Option<String>,
    pub timestamp: Option<DateTime<Utc>>,
    pub note: Option<String>,
}

impl ReviewInfo {
    pub fn pending() -> Self {
        Self { status: ReviewStatus::Pending, reviewer: None, timestamp: None, note: None }
    }
}

/// One exported conversation, schema `sdft/1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingRecord {
    pub schema_version: String,
    pub record_id: String,
    pub images: Vec<RecordImage>,
    pub concept: RecordConcept,
    pub turns: Vec<RecordTurn>,
    pub synthesis: SynthesisInfo,
    pub review: ReviewInfo,
}

impl TrainingRecord {
    pub fn from_triplet(triplet: &DialogueTriplet, review: ReviewInfo) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            record_id: triplet.record_id.clone(),
            images: vec![RecordImage {
                digest: triplet.image.digest.clone(),
                locator: triplet.image.locator.clone(),
                media_type: triplet.image.media_type,
            }],
            concept: RecordConcept {
                id: triplet.concept_id.clone(),
                target: triplet.target_knowledge.clone(),
                unrelated: triplet.unrelated_knowledge.clone(),
                category: triplet.category,
            },
            turns: triplet
                .turns
                .iter()
                .map(|t| RecordTurn {
                    phase: t.phase,
                    question: t.question.clone(),
                    answer: t.answer.clone(),
                    loss_weight: t.loss_weight,
                    provenance: t.answer_provenance,
                })
                .collect(),
            synthesis: SynthesisInfo {
                seed: triplet.seed,
                template_index: triplet.templates.target_template_index,
                vote: triplet.vote.as_ref().map(VoteSummary::from),
                flags: triplet.flags.clone(),
            },
            review,
        }
    }

    pub fn turn(&self, phase: Phase) -> Option<&RecordTurn> {
        self.turns.iter().find(|t| t.phase == phase)
    }

    /// Phase -> loss weight for the turns present.
    pub fn weights_by_phase(&self) -> BTreeMap<Phase, f64> {
        self.turns.iter().map(|t| (t.phase, t.loss_weight)).collect()
    }

    /// Canonical single-line JSON: keys sorted at every level, no trailing newline.
    pub fn to_canonical_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("records always serialize"))
    }

    pub fn from_json(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

/// Keeps only the phases of `mode`, in phase order. Weights stay per phase.
pub fn apply_structure_mode(record: &TrainingRecord, mode: StructureMode) -> TrainingRecord {
    let keep = mode.phases();
    TrainingRecord {
        turns: record.turns.iter().filter(|t| keep.contains(&t.phase)).cloned().collect(),
        ..record.clone()
    }
}

/// Serializes `value` with object keys sorted lexicographically at every level.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("string keys serialize"));
                out.push(':');
                write_canonical(&map[key], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&serde_json::to_string(scalar).expect("scalars serialize")),
    }
}
