//! Fixture builders shared by unit and integration tests.

use chrono::{TimeZone, Utc};

use crate::dataset::{ReviewInfo, TrainingRecord};
use crate::domain::{
    Category, ConceptSpec, DialogueTriplet, DialogueTurn, ImageRef, MediaType, Phase, Provenance, TemplateChoice,
    TurnWeights,
};
use crate::gateway::LoadedImage;

/// Deterministic fake image bytes for `(concept, index)`.
pub fn fixture_image(concept_id: &str, index: usize) -> LoadedImage {
    let bytes = format!("\u{89}PNG fixture {concept_id} {index}").into_bytes();
    LoadedImage::new(ImageRef::from_bytes(format!("images/{concept_id}-{index}.png"), MediaType::Png, &bytes), bytes)
}

pub fn fixture_concept(id: &str, category: Category, target: &str, unrelated: &str, images: usize) -> ConceptSpec {
    ConceptSpec {
        id: id.into(),
        category,
        target_knowledge: target.into(),
        unrelated_knowledge: unrelated.into(),
        images: (0..images).map(|i| fixture_image(id, i).image).collect(),
        domain: None,
        description: None,
    }
}

/// A valid full triplet about "global warming" vs "transportation".
pub fn sample_triplet(record_id: &str, concept_id: &str) -> DialogueTriplet {
    let w = TurnWeights::default();
    let turn = |phase, q: &str, a: &str, p| DialogueTurn {
        phase,
        question: q.into(),
        answer: a.into(),
        answer_provenance: p,
        loss_weight: w.for_phase(phase),
    };
    DialogueTriplet {
        record_id: record_id.into(),
        concept_id: concept_id.into(),
        category: Category::AbstractConcept,
        target_knowledge: "global warming".into(),
        unrelated_knowledge: "transportation".into(),
        image: fixture_image(concept_id, 0).image,
        turns: vec![
            turn(Phase::Caption, "Describe this image.", "Smokestacks release dark smoke.", Provenance::BaseModel),
            turn(
                Phase::Contrastive,
                "How does this image relate to transportation?",
                "No, this image is not related to transportation.",
                Provenance::MajorityVote,
            ),
            turn(
                Phase::Target,
                "How does this image relate to global warming?",
                "The emissions shown contribute to global warming by releasing greenhouse gases.",
                Provenance::SynthesisModel,
            ),
        ],
        seed: 7,
        templates: TemplateChoice { target_template_index: Some(2), contrastive_by_substitution: true },
        vote: None,
        flags: Vec::new(),
        created_at: Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap(),
    }
}

pub fn sample_record(record_id: &str, concept_id: &str) -> TrainingRecord {
    TrainingRecord::from_triplet(&sample_triplet(record_id, concept_id), ReviewInfo::pending())
}
