use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::TimeZone;

use super::*;
use crate::domain::{validate_triplet, Bucket, Category, ResponseSources, TurnWeights};
use crate::gateway::{MockBackend, MockRule, MockScript};
use crate::testing::{fixture_concept, fixture_image};

fn images_for(concepts: &[ConceptSpec]) -> MemoryImages {
    MemoryImages::new(
        concepts.iter().flat_map(|c| (0..c.images.len()).map(move |i| fixture_image(&c.id, i))),
    )
}

fn job(concepts: Vec<ConceptSpec>) -> SynthesisJob {
    let mut job = SynthesisJob::new("job1", concepts);
    job.seed = 11;
    job.created_at = Some(Utc.with_ymd_and_hms(2025, 3, 1, 0, 0, 0).unwrap());
    job
}

fn engine(script: MockScript, job: &SynthesisJob) -> (Engine, Arc<MockBackend>) {
    let mock = Arc::new(MockBackend::new(script));
    let engine = Engine::new(Arc::new(Gateway::single(mock.clone())), Arc::new(images_for(&job.concepts)));
    (engine, mock)
}

fn two_concepts() -> Vec<ConceptSpec> {
    let mut medical = fixture_concept("pe", Category::DomainExpertise, "pleural effusion", "cooking", 2);
    medical.domain = Some("medicine".into());
    vec![fixture_concept("gw", Category::AbstractConcept, "global warming", "transportation", 3), medical]
}

#[tokio::test]
async fn clean_job_produces_valid_unflagged_triplets() {
    let job = job(two_concepts());
    let (engine, mock) = engine(MockScript::default(), &job);
    let out = engine.run_job(&job).await.unwrap();
    assert_eq!(out.triplets.len(), 5);
    assert_eq!(out.report.requested, 5);
    assert_eq!(out.report.failed, 0);
    assert_eq!(out.report.flagged, 0);
    assert_eq!(out.report.per_concept["gw"], 3);
    for t in &out.triplets {
        assert!(validate_triplet(t, Some(&job.weights)).is_empty(), "{t:?}");
        let vote = t.vote.as_ref().unwrap();
        assert_eq!(vote.m, 3);
        assert_eq!(vote.winner_bucket, Bucket::Negation);
        assert_eq!(t.turn(Phase::Contrastive).unwrap().answer_provenance, Provenance::MajorityVote);
        assert_eq!(t.turn(Phase::Caption).unwrap().answer_provenance, Provenance::BaseModel);
        assert_eq!(t.turn(Phase::Target).unwrap().answer_provenance, Provenance::SynthesisModel);
    }
    let ids: Vec<_> = out.triplets.iter().map(|t| t.record_id.as_str()).collect();
    assert_eq!(ids, ["job1-gw-00", "job1-gw-01", "job1-gw-02", "job1-pe-00", "job1-pe-01"]);

    // Answer roles follow the response sources.
    for call in mock.calls() {
        let expected = match call.purpose {
            RequestPurpose::CaptionAnswer | RequestPurpose::ContrastiveAnswer => ModelRole::Base,
            _ => ModelRole::Synthesizer,
        };
        assert_eq!(call.role, expected, "{:?}", call.purpose);
    }
    // Template concepts derive the contrastive question by substitution.
    let gw = &out.triplets[0];
    assert!(gw.templates.contrastive_by_substitution);
    let q3 = &gw.turn(Phase::Target).unwrap().question;
    assert_eq!(gw.turn(Phase::Contrastive).unwrap().question, q3.replace("global warming", "transportation"));
    let contrastive_q_calls = mock.calls().iter().filter(|c| c.purpose == RequestPurpose::ContrastiveQuestion).count();
    assert_eq!(contrastive_q_calls, 2);
}

#[tokio::test]
async fn runs_are_reproducible() {
    let job = job(two_concepts());
    let script = MockScript { max_latency_ms: Some(4), ..MockScript::default() };
    let (a, _) = engine(script.clone(), &job);
    let (b, _) = engine(script, &job);
    assert_eq!(a.run_job(&job).await.unwrap().triplets, b.run_job(&job).await.unwrap().triplets);
}

#[tokio::test]
async fn ablation_uses_only_the_synthesizer() {
    let mut job = job(two_concepts());
    job.response_source = ResponseSources::synthesizer_only();
    let (engine, mock) = engine(MockScript::default(), &job);
    let out = engine.run_job(&job).await.unwrap();
    assert!(mock.calls().iter().all(|c| c.role == ModelRole::Synthesizer));
    assert_eq!(out.report.calls.keys().collect::<Vec<_>>(), ["synthesizer"]);
}

#[tokio::test]
async fn vote_draws_use_distinct_samples() {
    let mut job = job(vec![fixture_concept("gw", Category::AbstractConcept, "global warming", "transportation", 1)]);
    job.vote_m = 5;
    let (engine, mock) = engine(MockScript::default(), &job);
    engine.run_job(&job).await.unwrap();
    let draws: Vec<_> = mock.calls().into_iter().filter(|c| c.purpose == RequestPurpose::ContrastiveAnswer).collect();
    assert_eq!(draws.len(), 5);
    let samples: BTreeSet<_> = draws.iter().map(|c| c.sample_index.unwrap()).collect();
    assert_eq!(samples, (0..5).collect());
    let seeds: BTreeSet<_> = draws.iter().map(|c| c.sampling_seed.unwrap()).collect();
    assert_eq!(seeds.len(), 5);
}

#[tokio::test]
async fn single_pass_keeps_source_provenance() {
    let mut job = job(vec![fixture_concept("gw", Category::AbstractConcept, "global warming", "transportation", 1)]);
    job.vote_m = 1;
    let (engine, _) = engine(MockScript::default(), &job);
    let t = &engine.run_job(&job).await.unwrap().triplets[0];
    assert_eq!(t.turn(Phase::Contrastive).unwrap().answer_provenance, Provenance::BaseModel);
    assert!(!t.vote.as_ref().unwrap().tie_flag);
}

fn contrastive_script(answers: &[&str]) -> MockScript {
    MockScript::default().with_rule(MockRule::for_purpose(RequestPurpose::ContrastiveAnswer, answers))
}

#[tokio::test]
async fn tie_is_flagged_and_negation_wins() {
    let job = job(vec![fixture_concept("gw", Category::AbstractConcept, "global warming", "transportation", 1)]);
    let (engine, _) = engine(
        contrastive_script(&["The picture shows a factory.", "Yes, it is about {unrelated}.", "No, it is not about {unrelated}."]),
        &job,
    );
    let out = engine.run_job(&job).await.unwrap();
    let t = &out.triplets[0];
    assert_eq!(t.flags, [TripletFlag::VoteTie]);
    assert_eq!(t.turn(Phase::Contrastive).unwrap().answer, "No, it is not about transportation.");
    assert_eq!(out.report.vote_ties, 1);
}

#[tokio::test]
async fn non_negation_winner_is_flagged() {
    let job = job(vec![fixture_concept("gw", Category::AbstractConcept, "global warming", "transportation", 1)]);
    let (engine, _) =
        engine(contrastive_script(&["Yes, it shows {unrelated}.", "No, it does not.", "Yes, clearly."]), &job);
    let t = engine.run_job(&job).await.unwrap().triplets.remove(0);
    assert_eq!(t.flags, [TripletFlag::VoteNonNegation]);
    assert_eq!(t.vote.unwrap().winner_index, 0);
}

fn domain_job() -> SynthesisJob {
    let mut c = fixture_concept("pe", Category::DomainExpertise, "pleural effusion", "cooking", 1);
    c.domain = Some("medicine".into());
    job(vec![c])
}

#[tokio::test]
async fn leaking_contrastive_question_is_regenerated_once() {
    let job = domain_job();
    let script = MockScript::default().with_priority_rule(MockRule::for_purpose(
        RequestPurpose::ContrastiveQuestion,
        &["Does this image show {target}?", "Does this image show {unrelated}?"],
    ));
    let (engine, mock) = engine(script, &job);
    let out = engine.run_job(&job).await.unwrap();
    let t = &out.triplets[0];
    assert!(t.flags.is_empty());
    assert_eq!(t.turn(Phase::Contrastive).unwrap().question, "Does this image show cooking?");
    assert_eq!(out.report.contrastive_regenerated, 1);
    let samples: Vec<_> = mock
        .calls()
        .into_iter()
        .filter(|c| c.purpose == RequestPurpose::ContrastiveQuestion)
        .map(|c| c.sample_index)
        .collect();
    assert_eq!(samples, [Some(0), Some(1)]);
}

#[tokio::test]
async fn persistent_leak_is_flagged_not_dropped() {
    let job = domain_job();
    let script = MockScript::default().with_priority_rule(MockRule::for_purpose(
        RequestPurpose::ContrastiveQuestion,
        &["Is {target} visible here?"],
    ));
    let (engine, mock) = engine(script, &job);
    let out = engine.run_job(&job).await.unwrap();
    let t = &out.triplets[0];
    assert_eq!(t.flags, [TripletFlag::ContrastivePostCheckFailed]);
    assert_eq!(out.report.contrastive_post_check_failed, 1);
    let violations = validate_triplet(t, Some(&job.weights));
    assert!(!violations.is_empty() && !has_errors(&violations));
    let attempts = mock.calls().iter().filter(|c| c.purpose == RequestPurpose::ContrastiveQuestion).count();
    assert_eq!(attempts, 2);
}

#[tokio::test]
async fn target_answer_requires_prior_turns() {
    let job = domain_job();
    let (engine, _) = engine(MockScript::default(), &job);
    let ctx = engine.context(&job);
    let image = fixture_image("pe", 0);
    let err = ctx.target_answer(&job.concepts[0], &image, "q", &[], 1).await.unwrap_err();
    assert!(matches!(err, SynthesisError::Precondition(_)));
}

#[tokio::test]
async fn template_concepts_need_a_template() {
    let job = job(vec![fixture_concept("gw", Category::AbstractConcept, "global warming", "transportation", 1)]);
    let (engine, _) = engine(MockScript::default(), &job);
    let ctx = engine.context(&job);
    let err = ctx.target_question(&job.concepts[0], &fixture_image("gw", 0), None, 1).await.unwrap_err();
    assert!(matches!(err, SynthesisError::Precondition(_)));
}

#[tokio::test]
async fn concurrency_is_bounded() {
    let concepts: Vec<_> = (0..4)
        .map(|i| fixture_concept(&format!("c{i}"), Category::AbstractConcept, "global warming", "transportation", 3))
        .collect();
    let mut job = job(concepts);
    job.max_concurrency = 2;
    let script = MockScript { max_latency_ms: Some(3), ..MockScript::default() };
    let (engine, mock) = engine(script, &job);
    let out = engine.run_job(&job).await.unwrap();
    assert_eq!(out.triplets.len(), 12);
    assert!(mock.max_concurrency_observed() <= 2);
    assert_eq!(mock.max_concurrency_observed(), 2);
}

#[tokio::test]
async fn gateway_failures_abort_only_their_triplet() {
    let job = job(two_concepts());
    let script = MockScript::default()
        .with_priority_rule(MockRule::for_purpose(RequestPurpose::CaptionAnswer, &[" "]).when_label("concept", "pe"));
    let (engine, _) = engine(script, &job);
    let out = engine.run_job(&job).await.unwrap();
    assert_eq!(out.report.produced, 3);
    assert_eq!(out.report.failed, 2);
    assert!(out.report.failures.iter().all(|f| f.concept_id == "pe" && f.error.contains("empty")));
}

#[tokio::test]
async fn missing_image_bytes_fail_the_triplet() {
    let job = job(two_concepts());
    let mock = Arc::new(MockBackend::new(MockScript::default()));
    let engine = Engine::new(Arc::new(Gateway::single(mock)), Arc::new(MemoryImages::default()));
    let out = engine.run_job(&job).await.unwrap();
    assert_eq!(out.report.failed, 5);
}

#[tokio::test]
async fn invalid_jobs_are_rejected() {
    let mut job = job(two_concepts());
    job.weights = TurnWeights::unchecked(0.2, 0.3, 0.6);
    let (engine, _) = engine(MockScript::default(), &job);
    assert!(matches!(engine.run_job(&job).await, Err(SynthesisError::InvalidJob(_))));
}

#[tokio::test]
async fn templates_rotate_without_repeats() {
    let job = job(vec![fixture_concept("gw", Category::AbstractConcept, "global warming", "transportation", 10)]);
    let (engine, _) = engine(MockScript::default(), &job);
    let out = engine.run_job(&job).await.unwrap();
    let used: BTreeSet<_> = out.triplets.iter().map(|t| t.templates.target_template_index.unwrap()).collect();
    assert_eq!(used.len(), 10);
}

#[tokio::test]
async fn extracts_concepts() {
    let script = MockScript::strict(vec![MockRule::for_purpose(
        RequestPurpose::ConceptExtraction,
        &["1. Pleural effusion\n2. Cardiomegaly\n3. pleural effusion"],
    )]);
    let engine = Engine::new(
        Arc::new(Gateway::single(Arc::new(MockBackend::new(script)))),
        Arc::new(MemoryImages::default()),
    );
    let concepts = engine.extract_concepts("report text").await.unwrap();
    assert_eq!(concepts, ["Pleural effusion", "Cardiomegaly"]);
}

#[test]
fn seeds_and_post_check() {
    assert_eq!(derive_seed(1, &["a"]), derive_seed(1, &["a"]));
    assert_ne!(derive_seed(1, &["a"]), derive_seed(2, &["a"]));
    assert!(contrastive_post_check("How does this relate to Transportation?", "global warming", "transportation"));
    assert!(!contrastive_post_check("How does global warming relate to transportation?", "global warming", "transportation"));
    assert!(!contrastive_post_check("How does this relate?", "global warming", "transportation"));
}
