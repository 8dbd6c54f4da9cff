use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{Phase, Violation};
use crate::templates::PLACEHOLDER;
use crate::text::contains_normalized;

use super::record::{TrainingRecord, SCHEMA_VERSION};

const ALLOWED_STRUCTURES: [&[Phase]; 3] = [
    &[Phase::Caption, Phase::Contrastive, Phase::Target],
    &[Phase::Caption, Phase::Target],
    &[Phase::Target],
];

/// A violation found in a dataset file, located by 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineViolation {
    pub line: usize,
    pub record_id: Option<String>,
    pub field: String,
    pub rule: String,
}

impl std::fmt::Display for LineViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.record_id {
            Some(id) => write!(f, "line {} ({id}): {}: {}", self.line, self.field, self.rule),
            None => write!(f, "line {}: {}: {}", self.line, self.field, self.rule),
        }
    }
}

/// Checks one record in isolation. Cross-record rules live in [`validate_lines`].
pub fn validate_record(record: &TrainingRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.schema_version != SCHEMA_VERSION {
        out.push(Violation::error("schema_version", format!("expected \"{SCHEMA_VERSION}\"")));
    }
    if record.record_id.trim().is_empty() {
        out.push(Violation::error("record_id", "must be non-empty"));
    }
    if record.images.is_empty() {
        out.push(Violation::error("images", "at least one image is required"));
    }
    for (i, image) in record.images.iter().enumerate() {
        if image.digest.len() != 64 || !image.digest.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()) {
            out.push(Violation::error(format!("images[{i}].digest"), "must be 64 lowercase hex characters"));
        }
    }
    if record.concept.target.trim().is_empty() || record.concept.unrelated.trim().is_empty() {
        out.push(Violation::error("concept", "target and unrelated knowledge must be non-empty"));
    }
    let phases: Vec<Phase> = record.turns.iter().map(|t| t.phase).collect();
    if !ALLOWED_STRUCTURES.contains(&phases.as_slice()) {
        out.push(Violation::error("turns", format!("turn order {phases:?} is not a supported structure")));
    }
    for turn in &record.turns {
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
        if turn.question.contains(PLACEHOLDER) || turn.answer.contains(PLACEHOLDER) {
            out.push(Violation::error(field.clone(), "residual [TARGET] placeholder"));
        }
    }
    if record.turns.len() == 3 {
        let sum: f64 = record.turns.iter().map(|t| t.loss_weight).sum();
        if (sum - 1.0).abs() > 1e-9 {
            out.push(Violation::error("turns", "loss weights of a full record must sum to 1"));
        }
    }
    if let Some(q2) = record.turn(Phase::Contrastive) {
        if contains_normalized(&q2.question, &record.concept.target) {
            out.push(Violation::error("turns.contrastive.question", "contrastive leak: contains the target knowledge"));
        }
        if !contains_normalized(&q2.question, &record.concept.unrelated) {
            out.push(Violation::warning("turns.contrastive.question", "does not mention the unrelated knowledge"));
        }
    }
    out
}

/// Validates JSONL content. Every problem is reported with its line number.
pub fn validate_lines(content: &str) -> Vec<LineViolation> {
    let mut out = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut weights: BTreeMap<Phase, (f64, usize)> = BTreeMap::new();
    if !content.is_empty() && !content.ends_with('\n') {
        let line = content.lines().count();
        out.push(LineViolation { line, record_id: None, field: "file".into(), rule: "last line is not LF-terminated".into() });
    }
    for (i, raw) in content.split_terminator('\n').enumerate() {
        let line = i + 1;
        let at = |record_id: Option<&str>, field: &str, rule: String| LineViolation {
            line,
            record_id: record_id.map(str::to_string),
            field: field.to_string(),
            rule,
        };
        if raw.ends_with('\r') {
            out.push(at(None, "line", "CRLF line ending".into()));
        }
        let record = match TrainingRecord::from_json(raw.trim_end_matches('\r')) {
            Ok(r) => r,
            Err(e) => {
                out.push(at(None, "line", format!("schema violation: {e}")));
                continue;
            }
        };
        let id = record.record_id.as_str();
        for v in validate_record(&record).into_iter().filter(Violation::is_error) {
            out.push(at(Some(id), &v.field, v.rule));
        }
        if let Some(first) = seen.insert(id.to_string(), line) {
            out.push(at(Some(id), "record_id", format!("duplicate id (first seen on line {first})")));
        }
        for turn in &record.turns {
            match weights.get(&turn.phase) {
                Some(&(w, first)) if (w - turn.loss_weight).abs() > 1e-12 => out.push(at(
                    Some(id),
                    &format!("turns.{}.loss_weight", turn.phase),
                    format!("inconsistent weight {} (line {first} uses {w})", turn.loss_weight),
                )),
                Some(_) => {}
                None => {
                    weights.insert(turn.phase, (turn.loss_weight, line));
                }
            }
        }
    }
    out
}

pub fn validate_file(path: impl AsRef<Path>) -> std::io::Result<Vec<LineViolation>> {
    let bytes = std::fs::read(path)?;
    match String::from_utf8(bytes) {
        Ok(content) => Ok(validate_lines(&content)),
        Err(e) => Ok(vec![LineViolation {
            line: e.as_bytes()[..e.utf8_error().valid_up_to()].iter().filter(|b| **b == b'\n').count() + 1,
            record_id: None,
            field: "file".into(),
            rule: format!("not UTF-8: {e}"),
        }]),
    }
}
