//! Recognition, QA and capability-retention metrics and their reports.

pub mod metrics;
mod qa;
mod recognition;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use metrics::{accuracy, retention_average, retention_ratio, weighted_accuracy, within, MetricError};
pub use qa::{closed_correct, qa_accuracy, token_f1, QaKind, QaResult, SimilarityScorer, TokenF1, OPEN_THRESHOLD};
pub use recognition::{recognition_eval, EvalError, ProbeOutcome, ProbeSet, RecognitionResult};

/// Benchmark accuracies in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetentionScores {
    pub pope: f64,
    pub mme: f64,
    pub textvqa: f64,
}

impl RetentionScores {
    pub fn checked(self) -> Result<Self, EvalError> {
        metrics::check_unit("pope", self.pope)?;
        metrics::check_unit("mme", self.mme)?;
        metrics::check_unit("textvqa", self.textvqa)?;
        Ok(self)
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str::<Self>(text).map_err(|e| EvalError::Input(e.to_string()))?.checked()
    }

    /// Per-item results with columns `benchmark,item_id,correct`; `correct`
    /// is `1`/`0` or `true`/`false`. Each benchmark's score is its item mean.
    pub fn from_item_csv(text: &str) -> Result<Self, EvalError> {
        #[derive(Deserialize)]
        struct Row {
            benchmark: String,
            #[allow(dead_code)]
            item_id: String,
            correct: String,
        }
        let mut tallies: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| EvalError::Input(format!("row {}: {e}", i + 2)))?;
            let correct = match row.correct.trim().to_ascii_lowercase().as_str() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(EvalError::Input(format!("row {}: bad correct value '{other}'", i + 2))),
            };
            let tally = tallies.entry(row.benchmark.trim().to_ascii_lowercase()).or_default();
            tally.0 += usize::from(correct);
            tally.1 += 1;
        }
        let score = |name: &'static str| -> Result<f64, EvalError> {
            let (c, n) = tallies.get(name).copied().unwrap_or((0, 0));
            Ok(accuracy(name, c, n)?)
        };
        Ok(Self { pope: score("pope")?, mme: score("mme")?, textvqa: score("textvqa")? })
    }

    pub fn average(&self) -> f64 {
        retention_average(self.pope, self.mme, self.textvqa)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionSummary {
    pub pope: f64,
    pub mme: f64,
    pub textvqa: f64,
    pub average: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_average: Option<f64>,
    /// `average / base_average`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_to_base: Option<f64>,
}

impl RetentionSummary {
    pub fn new(scores: RetentionScores, base: Option<RetentionScores>) -> Self {
        let average = scores.average();
        let base_average = base.map(|b| b.average());
        Self {
            pope: scores.pope,
            mme: scores.mme,
            textvqa: scores.textvqa,
            average,
            base_average,
            ratio_to_base: base_average.and_then(|b| retention_ratio(average, b)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub recognition: Vec<RecognitionResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa: Option<QaResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retention: Option<RetentionSummary>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        if !self.recognition.is_empty() {
            out.push_str("| Concept | Pos | Neg | Weighted | Unknown |\n|---|---|---|---|---|\n");
            for r in &self.recognition {
                let _ = writeln!(
                    out,
                    "| {} | {:.3} | {:.3} | {:.3} | {} |",
                    r.concept_id, r.pos_acc, r.neg_acc, r.weighted_acc, r.unknown
                );
            }
            out.push('\n');
        }
        if let Some(qa) = &self.qa {
            let kind = match qa.kind {
                QaKind::Closed => "closed",
                QaKind::Open => "open",
            };
            let scorer = qa.scorer.as_deref().map(|s| format!(" ({s})")).unwrap_or_default();
            let _ = writeln!(out, "| QA | Correct | Total | Accuracy |\n|---|---|---|---|");
            let _ = writeln!(out, "| {kind}{scorer} | {} | {} | {:.3} |\n", qa.correct, qa.total, qa.accuracy);
        }
        if let Some(r) = &self.retention {
            let _ = writeln!(out, "| POPE | MME | TextVQA | Average | Ratio to base |\n|---|---|---|---|---|");
            let ratio = r.ratio_to_base.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(out, "| {:.3} | {:.3} | {:.3} | {:.3} | {ratio} |", r.pope, r.mme, r.textvqa, r.average);
        }
        out
    }
}
