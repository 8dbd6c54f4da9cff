use proptest::prelude::*;

use super::*;
use crate::domain::{Phase, Provenance, StructureMode};
use crate::loss::{weight_mask, whitespace_spans, TokenSpan};
use crate::testing::sample_record;

fn with_status(id: &str, status: ReviewStatus) -> TrainingRecord {
    let mut r = sample_record(id, "c1");
    r.review.status = status;
    r
}

#[test]
fn structure_modes_keep_the_right_turns() {
    let full = sample_record("r1", "c1");
    let phases = |r: &TrainingRecord| r.turns.iter().map(|t| t.phase).collect::<Vec<_>>();
    assert_eq!(phases(&apply_structure_mode(&full, StructureMode::Full)).len(), 3);
    assert_eq!(
        phases(&apply_structure_mode(&full, StructureMode::CaptionTarget)),
        vec![Phase::Caption, Phase::Target]
    );
    let target = apply_structure_mode(&full, StructureMode::TargetOnly);
    assert_eq!(phases(&target), vec![Phase::Target]);
    assert_eq!(target.turns[0].loss_weight, 0.5);
}

#[test]
fn export_counts_and_filters() {
    let dir = tempfile::tempdir().unwrap();
    let records: Vec<_> = [
        ReviewStatus::Approved,
        ReviewStatus::Approved,
        ReviewStatus::Approved,
        ReviewStatus::Edited,
        ReviewStatus::Rejected,
        ReviewStatus::Pending,
    ]
    .into_iter()
    .enumerate()
    .map(|(i, s)| with_status(&format!("r{i}"), s))
    .collect();

    let all = dir.path().join("all.jsonl");
    let manifest = export(&records, StructureMode::Full, false, &all).unwrap();
    assert_eq!(manifest.record_count, 6);
    assert_eq!(std::fs::read_to_string(&all).unwrap().lines().count(), 6);
    assert!(manifest_path(&all).exists());
    assert_eq!(manifest_path(&all).file_name().unwrap(), "all.manifest.json");

    let approved = dir.path().join("approved.jsonl");
    let manifest = export(&records, StructureMode::Full, true, &approved).unwrap();
    assert_eq!(manifest.record_count, 4);
    assert!(manifest.verify(&std::fs::read(&approved).unwrap()));
    assert!(validate_file(&approved).unwrap().is_empty());
}

#[test]
fn identical_inputs_give_identical_digests() {
    let records = vec![sample_record("a", "c1"), sample_record("b", "c2")];
    let one = render_export(&records, StructureMode::Full, false).unwrap();
    let two = render_export(&records, StructureMode::Full, false).unwrap();
    assert_eq!(one.bytes, two.bytes);
    assert_eq!(one.manifest.digest, two.manifest.digest);
}

#[test]
fn export_rejects_invalid_records() {
    let mut bad = sample_record("bad", "c1");
    bad.turns[1].question = "Is this about global warming?".into();
    let err = render_export(&[sample_record("ok", "c1"), bad], StructureMode::Full, false).unwrap_err();
    match err {
        ExportError::ValidationFailure(ids) => assert_eq!(ids, vec!["bad".to_string()]),
        other => panic!("unexpected {other}"),
    }
    let err = render_export(&[sample_record("x", "c1"), sample_record("x", "c1")], StructureMode::Full, false)
        .unwrap_err();
    assert!(matches!(err, ExportError::ValidationFailure(ids) if ids == vec!["x".to_string()]));
}

#[test]
fn empty_export_has_zero_count() {
    let rendered = render_export(&[with_status("p", ReviewStatus::Pending)], StructureMode::Full, true).unwrap();
    assert!(rendered.bytes.is_empty());
    assert_eq!(rendered.manifest.record_count, 0);
}

#[test]
fn validation_reports_leaks_duplicates_and_corruption() {
    let clean = render_export(&[sample_record("a", "c1"), sample_record("b", "c1")], StructureMode::Full, false)
        .unwrap();
    let text = String::from_utf8(clean.bytes).unwrap();
    assert!(validate_lines(&text).is_empty());

    let mut leaky = sample_record("leak", "c1");
    leaky.turns[1].question = "How does this image relate to Global Warming?".into();
    let line = leaky.to_canonical_json();
    let v = validate_lines(&format!("{line}\n"));
    assert!(v.iter().any(|v| v.rule.starts_with("contrastive leak")), "{v:?}");

    let a = sample_record("dup", "c1").to_canonical_json();
    let v = validate_lines(&format!("{a}\n{a}\n"));
    assert_eq!(v.len(), 1);
    assert!(v[0].rule.starts_with("duplicate id"));
    assert_eq!(v[0].line, 2);

    let v = validate_lines(&format!("{a}\n{{\"schema_version\":\n"));
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].line, 2);
    assert!(v[0].rule.starts_with("schema violation"));

    let mut placeholder = sample_record("ph", "c1");
    placeholder.turns[2].question = "How does this image relate to [TARGET]?".into();
    let v = validate_lines(&format!("{}\n", placeholder.to_canonical_json()));
    assert!(v.iter().any(|v| v.rule.contains("[TARGET]")));
}

#[test]
fn inconsistent_weights_across_records() {
    let a = sample_record("a", "c1");
    let mut b = sample_record("b", "c1");
    b.turns[0].loss_weight = 0.3;
    b.turns[1].loss_weight = 0.2;
    let text = format!("{}\n{}\n", a.to_canonical_json(), b.to_canonical_json());
    let v = validate_lines(&text);
    assert_eq!(v.iter().filter(|v| v.rule.starts_with("inconsistent weight")).count(), 2);
}

#[test]
fn unknown_fields_fail_the_schema() {
    let mut value = serde_json::to_value(sample_record("a", "c1")).unwrap();
    value["extra"] = serde_json::json!(1);
    let v = validate_lines(&format!("{}\n", canonical_json(&value)));
    assert!(v[0].rule.contains("unknown field"));
}

#[test]
fn mask_weights_follow_structure() {
    let full = sample_record("a", "c1");
    for (mode, allowed) in [
        (StructureMode::Full, vec![0.0, 0.2, 0.3, 0.5]),
        (StructureMode::CaptionTarget, vec![0.0, 0.2, 0.5]),
        (StructureMode::TargetOnly, vec![0.0, 0.5]),
    ] {
        let record = apply_structure_mode(&full, mode);
        let (text, _) = crate::loss::render_dialogue(&record);
        let mask = weight_mask(&record, &whitespace_spans(&text)).unwrap();
        assert!(mask.weights().all(|w| allowed.contains(&w)), "{mode:?}");
        assert!(mask.weights().any(|w| w == 0.5));
        assert!(mask.weights().any(|w| w == 0.0));
    }
}

#[test]
fn overlapping_spans_rejected() {
    let record = sample_record("a", "c1");
    let spans = [TokenSpan { start: 0, end: 4 }, TokenSpan { start: 3, end: 6 }];
    assert!(matches!(
        weight_mask(&record, &spans),
        Err(crate::loss::LossError::OverlappingSpans { index: 1, .. })
    ));
}

#[test]
fn mask_assigns_question_zero_and_answer_alpha() {
    let record = sample_record("a", "c1");
    let (text, segments) = crate::loss::render_dialogue(&record);
    // One span per segment start character.
    let spans: Vec<TokenSpan> = segments.iter().map(|s| TokenSpan { start: s.start, end: s.start + 1 }).collect();
    let mask = weight_mask(&record, &spans).unwrap();
    let got: Vec<f64> = mask.weights().collect();
    assert_eq!(got, vec![0.0, 0.2, 0.0, 0.3, 0.0, 0.5]);
    assert_eq!(text.chars().count(), segments.last().unwrap().end);
}

#[test]
fn sidecar_has_one_line_per_record() {
    let records = vec![sample_record("a", "c1"), sample_record("b", "c1")];
    let sidecar = render_mask_sidecar(&records).unwrap();
    let lines: Vec<MaskLine> = sidecar.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1].record_id, "b");
    assert_eq!(lines[0].spans.len(), lines[0].weights.len());
}

prop_compose! {
    fn arb_record()(
        id in "[a-z0-9]{1,12}",
        caption in "[ -~]{1,40}",
        answer in "\\PC{1,40}",
        seed in any::<u64>(),
        edited in any::<bool>(),
    ) -> TrainingRecord {
        let mut r = sample_record(&id, "c1");
        r.turns[0].answer = format!("A{answer}");
        r.turns[0].question = format!("Q{caption}");
        r.synthesis.seed = seed;
        if edited {
            r.turns[2].provenance = Provenance::HumanEdit;
            r.review.status = ReviewStatus::Edited;
        }
        r
    }
}

proptest! {
    #[test]
    fn serialize_parse_is_identity(record in arb_record()) {
        let line = record.to_canonical_json();
        let parsed = TrainingRecord::from_json(&line).unwrap();
        prop_assert_eq!(&parsed, &record);
        prop_assert_eq!(parsed.to_canonical_json(), line);
    }

    #[test]
    fn exports_always_validate(records in prop::collection::vec(arb_record(), 0..6)) {
        let mut records = records;
        records.sort_by(|a, b| a.record_id.cmp(&b.record_id));
        records.dedup_by(|a, b| a.record_id == b.record_id);
        let rendered = render_export(&records, StructureMode::Full, false).unwrap();
        let text = String::from_utf8(rendered.bytes).unwrap();
        prop_assert!(validate_lines(&text).is_empty());
        prop_assert_eq!(text.lines().count(), rendered.manifest.record_count);
    }
}
