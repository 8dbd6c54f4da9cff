use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::{sha256_hex, Phase, StructureMode};
use crate::loss::{self, whitespace_spans, LossError, TokenSpan};

use super::record::{apply_structure_mode, canonical_json, TrainingRecord};
use super::validate::{validate_lines, validate_record};

pub const TOOL_VERSION: &str = concat!("sdft/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("validation failed for records: {}", .0.join(", "))]
    ValidationFailure(Vec<String>),
    #[error("weight mask for {record_id}: {source}")]
    Mask { record_id: String, source: LossError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub record_count: usize,
    pub per_concept: BTreeMap<String, usize>,
    /// SHA-256 of the exported JSONL bytes.
    pub digest: String,
    /// Loss weight per phase present in the export.
    pub weights: BTreeMap<Phase, f64>,
    pub structure_mode: StructureMode,
    pub approved_only: bool,
    pub created_at: DateTime<Utc>,
    pub tool_version: String,
}

impl DatasetManifest {
    /// True when `bytes` hash to the recorded digest.
    pub fn verify(&self, bytes: &[u8]) -> bool {
        sha256_hex(bytes) == self.digest
    }
}

/// The exported JSONL bytes and their manifest, without touching the filesystem.
#[derive(Debug, Clone)]
pub struct RenderedExport {
    pub bytes: Vec<u8>,
    pub manifest: DatasetManifest,
}

/// Filters, reshapes and serializes `records`.
///
/// `approved_only` keeps approved and edited records. Any record that fails
/// validation after reshaping aborts the export with its id listed.
pub fn render_export(
    records: &[TrainingRecord],
    mode: StructureMode,
    approved_only: bool,
) -> Result<RenderedExport, ExportError> {
    let selected: Vec<TrainingRecord> = records
        .iter()
        .filter(|r| !approved_only || r.review.status.is_exportable())
        .map(|r| apply_structure_mode(r, mode))
        .collect();

    let failed: Vec<String> = selected
        .iter()
        .filter(|r| validate_record(r).iter().any(|v| v.is_error()))
        .map(|r| r.record_id.clone())
        .collect();
    if !failed.is_empty() {
        return Err(ExportError::ValidationFailure(failed));
    }

    let mut text = String::new();
    for record in &selected {
        text.push_str(&record.to_canonical_json());
        text.push('\n');
    }
    // Cross-record rules: duplicate ids and inconsistent weights.
    let cross = validate_lines(&text);
    if !cross.is_empty() {
        let mut ids: Vec<String> = cross.into_iter().filter_map(|v| v.record_id).collect();
        ids.dedup();
        return Err(ExportError::ValidationFailure(ids));
    }

    let mut per_concept = BTreeMap::new();
    let mut weights = BTreeMap::new();
    for record in &selected {
        *per_concept.entry(record.concept.id.clone()).or_insert(0) += 1;
        weights.extend(record.weights_by_phase());
    }
    let bytes = text.into_bytes();
    let manifest = DatasetManifest {
        record_count: selected.len(),
        per_concept,
        digest: sha256_hex(&bytes),
        weights,
        structure_mode: mode,
        approved_only,
        created_at: Utc::now(),
        tool_version: TOOL_VERSION.to_string(),
    };
    Ok(RenderedExport { bytes, manifest })
}

/// `data.jsonl` -> `data.manifest.json`, next to the dataset.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    let stem = dataset.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into());
    dataset.with_file_name(format!("{stem}.manifest.json"))
}

/// Exports to `out` (atomically, via a temp file and rename) and writes the
/// manifest alongside.
pub fn export(
    records: &[TrainingRecord],
    mode: StructureMode,
    approved_only: bool,
    out: &Path,
) -> Result<DatasetManifest, ExportError> {
    let rendered = render_export(records, mode, approved_only)?;
    write_atomic(out, &rendered.bytes)?;
    let manifest_json = canonical_json(&serde_json::to_value(&rendered.manifest).expect("manifest serializes"));
    write_atomic(&manifest_path(out), format!("{manifest_json}\n").as_bytes())?;
    Ok(rendered.manifest)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExportError> {
    let io = |source| ExportError::Io { path: path.to_path_buf(), source };
    let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(io)
}

/// Reads a JSONL dataset back into records.
pub fn read_records(path: &Path) -> Result<Vec<TrainingRecord>, ExportError> {
    let content = std::fs::read_to_string(path).map_err(|source| ExportError::Io { path: path.to_path_buf(), source })?;
    content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            TrainingRecord::from_json(l).map_err(|e| ExportError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
            })
        })
        .collect()
}

/// One line of the weight-mask sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskLine {
    pub record_id: String,
    pub tokenizer: String,
    pub spans: Vec<TokenSpan>,
    pub weights: Vec<f64>,
}

/// Whitespace-tokenized weight masks for `records`, one JSON line each.
pub fn render_mask_sidecar(records: &[TrainingRecord]) -> Result<String, ExportError> {
    let mut out = String::new();
    for record in records {
        let (text, _) = loss::render_dialogue(record);
        let spans = whitespace_spans(&text);
        let mask = loss::weight_mask(record, &spans)
            .map_err(|source| ExportError::Mask { record_id: record.record_id.clone(), source })?;
        let line = MaskLine {
            record_id: record.record_id.clone(),
            tokenizer: "whitespace".into(),
            spans,
            weights: mask.weights().collect(),
        };
        out.push_str(&canonical_json(&serde_json::to_value(&line).expect("mask line serializes")));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_mask_sidecar(records: &[TrainingRecord], out: &Path) -> Result<(), ExportError> {
    write_atomic(out, render_mask_sidecar(records)?.as_bytes())
}
