//! Training-data export: the `sdft/1` JSONL schema, structure-mode
//! transforms, manifests and file validation.

mod export;
mod record;
mod validate;

pub use export::{
    export, manifest_path, read_records, render_export, render_mask_sidecar, write_mask_sidecar, DatasetManifest,
    ExportError, MaskLine, RenderedExport, TOOL_VERSION,
};
pub use record::{
    apply_structure_mode, canonical_json, BucketCounts, RecordConcept, RecordImage, RecordTurn, ReviewInfo,
    ReviewStatus, SynthesisInfo, TrainingRecord, VoteSummary, SCHEMA_VERSION,
};
pub use validate::{validate_file, validate_lines, validate_record, LineViolation};

#[cfg(test)]
mod tests;
