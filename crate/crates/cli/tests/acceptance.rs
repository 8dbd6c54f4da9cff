//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints one PASS/FAIL line; any failure exits non-zero.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use sdft_core::curation::{CurationStore, ReviewRequest};
use sdft_core::dataset::{render_export, validate_lines, ReviewInfo, ReviewStatus, TrainingRecord};
use sdft_core::domain::{Bucket, Provenance, TripletFlag};
use sdft_core::eval::{retention_average, weighted_accuracy, within};
use sdft_core::gateway::{Gateway, MockBackend, MockRule, MockScript, RequestPurpose};
use sdft_core::loss::{total_loss, turn_cross_entropy, TurnLossInput};
use sdft_core::synthesis::{Engine, JobOutput, MemoryImages};
use sdft_core::templates::{sample_library, seeded_permutation, PLACEHOLDER};
use sdft_core::testing::{fixture_concept, fixture_image};
use sdft_core::{Category, ConceptSpec, Phase, Rational, StructureMode, SynthesisJob, TurnWeights};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("weighted multi-turn loss", c1_loss),
        ("recognition table arithmetic", c2_recognition_table),
        ("retention arithmetic", c3_retention),
        ("end-to-end determinism", c4_determinism),
        ("contrastive integrity", c5_contrastive),
        ("majority voting", c6_voting),
        ("structure modes", c7_structure_modes),
        ("template rotation", c8_rotation),
        ("curation replay", c9_replay),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {message}"))
        });
        let ms = started.elapsed().as_millis();
        match outcome {
            Ok(detail) => println!("criterion {} [PASS] {name}: {detail} ({ms} ms)", i + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {} [FAIL] {name}: {detail} ({ms} ms)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}

fn sdft(args: &[&str]) -> (bool, String, String) {
    let output = Command::new(env!("CARGO_BIN_EXE_sdft"))
        .args(args)
        .env_remove("SDFT_SEED")
        .env_remove("SDFT_VOTE_M")
        .env_remove("SDFT_MAX_CONCURRENCY")
        .env_remove("SDFT_MOCK")
        .output()
        .expect("sdft binary runs");
    (
        output.status.success(),
        String::from_utf8_lossy(&output.stdout).into_owned(),
        String::from_utf8_lossy(&output.stderr).into_owned(),
    )
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap()
}

fn r(n: i64, d: i64) -> Rational {
    Rational::new(n, d)
}

fn thousandths(x: f64) -> Rational {
    r((x * 1000.0).round() as i64, 1000)
}

// 1. Weighted total through the CLI, against a dot product computed here,
// plus linearity and convexity over random rational losses and weights.
fn c1_loss() -> Outcome {
    let started = Instant::now();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/weighted_loss.json");
    let (ok, out, err) = sdft(&["loss", "check", fixture.to_str().unwrap()]);
    ensure!(ok, "loss check failed: {err}");
    let printed: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("total"))
        .ok_or("no total line")?
        .trim()
        .parse()
        .map_err(|e| format!("total not numeric: {e}"))?;

    let data: Value = serde_json::from_str(&std::fs::read_to_string(&fixture).unwrap()).unwrap();
    let mean_nll = |phase: &str| -> f64 {
        let turn = data["turns"].as_array().unwrap().iter().find(|t| t["phase"] == phase).unwrap();
        let lps: Vec<f64> = turn["token_logprobs"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        -lps.iter().sum::<f64>() / lps.len() as f64
    };
    let losses = [mean_nll("caption"), mean_nll("contrastive"), mean_nll("target")];
    let alphas = ["alpha1", "alpha2", "alpha3"].map(|k| data["weights"][k].as_f64().unwrap());
    ensure!(losses == [2.0, 1.0, 0.5], "fixture losses are {losses:?}");
    let oracle: f64 = losses.iter().zip(alphas).map(|(l, a)| l * a).sum();
    ensure!((printed - oracle).abs() <= 1e-12 && (printed - 0.95).abs() <= 1e-12, "printed {printed}, oracle {oracle}");

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..1000 {
        let l: [Rational; 3] = std::array::from_fn(|_| r(rng.random_range(0..=20_000), 1000));
        let m: [Rational; 3] = std::array::from_fn(|_| r(rng.random_range(0..=20_000), 1000));
        let raw: [i64; 3] = std::array::from_fn(|_| rng.random_range(1..=100));
        let s: i64 = raw.iter().sum();
        let w = TurnWeights::new(r(raw[0], s), r(raw[1], s), r(raw[2], s)).map_err(|e| e.to_string())?;
        let total = |x: &[Rational; 3]| total_loss(x[0], x[1], x[2], &w).unwrap();
        let dot = l[0] * w.alpha1 + l[1] * w.alpha2 + l[2] * w.alpha3;
        ensure!(total(&l) == dot, "case {case}: not the weighted sum");
        let sum: [Rational; 3] = std::array::from_fn(|i| l[i] + m[i]);
        ensure!(total(&sum) == total(&l) + total(&m), "case {case}: not additive");
        let c = r(rng.random_range(0..=50), 7);
        ensure!(total(&l.map(|x| x * c)) == total(&l) * c, "case {case}: not homogeneous");
        let (lo, hi) = (*l.iter().min().unwrap(), *l.iter().max().unwrap());
        ensure!(lo <= total(&l) && total(&l) <= hi, "case {case}: outside the convex hull");

        let lf = l.map(|x| *x.numer() as f64 / *x.denom() as f64);
        let wf = TurnWeights::unchecked(raw[0] as f64 / s as f64, raw[1] as f64 / s as f64, raw[2] as f64 / s as f64);
        let tf = total_loss(lf[0], lf[1], lf[2], &wf).map_err(|e| format!("case {case}: {e}"))?;
        let exact = *dot.numer() as f64 / *dot.denom() as f64;
        ensure!((tf - exact).abs() <= 1e-12, "case {case}: f64 {tf} vs exact {exact}");

        let tokens: Vec<f64> = (0..rng.random_range(1..8)).map(|_| -rng.random_range(0.0..5.0)).collect();
        let ce = turn_cross_entropy(&TurnLossInput { phase: Phase::Target, token_logprobs: tokens.clone() }).unwrap();
        let mean = -tokens.iter().sum::<f64>() / tokens.len() as f64;
        ensure!((ce - mean).abs() <= 1e-12, "case {case}: cross-entropy {ce} vs {mean}");
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("printed {printed}, oracle {oracle}, 1000 property cases"))
}

// 2. Published (pos, neg, weighted) rows, compared exactly in rationals.
fn c2_recognition_table() -> Outcome {
    let rows = [
        (0.000, 1.000, 0.500),
        (0.851, 0.998, 0.925),
        (0.949, 0.898, 0.924),
        (0.914, 0.948, 0.931),
        (0.873, 0.920, 0.897),
    ];
    let tolerance = r(5, 10_000);
    for (pos, neg, published) in rows {
        let (pos, neg, published) = (thousandths(pos), thousandths(neg), thousandths(published));
        let got = weighted_accuracy(pos, neg);
        let oracle = (pos + neg) / r(2, 1);
        ensure!(got == oracle, "({pos}, {neg}) gave {got}, oracle {oracle}");
        ensure!(within(got, published, tolerance), "({pos}, {neg}) -> {got} vs published {published}");
    }
    Ok("5 of 5 rows within 0.0005".into())
}

// 3. Mean of POPE, MME and TextVQA for the fine-tuned and base models.
fn c3_retention() -> Outcome {
    let tolerance = r(5, 10_000);
    let mut shown = Vec::new();
    for (scores, published) in [((0.878, 0.608, 0.649), 0.712), ((0.872, 0.612, 0.680), 0.721)] {
        let (a, b, c) = (thousandths(scores.0), thousandths(scores.1), thousandths(scores.2));
        let got = retention_average(a, b, c);
        ensure!(got == (a + b + c) / r(3, 1), "average of {scores:?} is {got}");
        ensure!(within(got, thousandths(published), tolerance), "{scores:?} -> {got} vs {published}");
        shown.push(format!("{:.4}", *got.numer() as f64 / *got.denom() as f64));
    }
    let (ok, out, err) = sdft(&["eval", "retention", "--pope", "0.878", "--mme", "0.608", "--textvqa", "0.649"]);
    ensure!(ok && out.contains("average  0.712"), "cli output {out} {err}");
    Ok(format!("averages {} match 0.712 and 0.721", shown.join(", ")))
}

/// Six images over two concepts, as files next to a job file.
fn write_job(dir: &Path) {
    std::fs::create_dir_all(dir.join("img")).unwrap();
    let mut concepts = Vec::new();
    for (id, category, target, unrelated) in [
        ("gw", "abstract_concept", "global warming", "transportation"),
        ("pe", "domain_expertise", "pleural effusion", "cooking"),
    ] {
        let mut images = Vec::new();
        for i in 0..3 {
            let name = format!("img/{id}-{i}.png");
            std::fs::write(dir.join(&name), format!("image {id} {i}")).unwrap();
            images.push(name);
        }
        concepts.push(serde_json::json!({
            "id": id, "category": category, "target_knowledge": target,
            "unrelated_knowledge": unrelated, "images": images, "domain": "science"
        }));
    }
    let job = serde_json::json!({
        "job_id": "acc", "seed": 2024, "vote_m": 3, "created_at": "2025-01-01T00:00:00Z", "concepts": concepts
    });
    std::fs::write(dir.join("job.json"), job.to_string()).unwrap();
    std::fs::write(dir.join("mock.json"), r#"{"max_latency_ms": 3}"#).unwrap();
}

// 4. Same seed, same bytes, regardless of concurrency and completion order.
fn c4_determinism() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    write_job(dir.path());
    let path = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let mut digests = Vec::new();
    let mut bytes = Vec::new();
    for (name, concurrency) in [("a.jsonl", "8"), ("b.jsonl", "8"), ("c.jsonl", "1")] {
        let (ok, out, err) = sdft(&[
            "--json", "synth", &path("job.json"), "--mock", &path("mock.json"),
            "--max-concurrency", concurrency, "--out", &path(name),
        ]);
        ensure!(ok, "synth failed: {err}");
        let summary: Value = serde_json::from_str(&out).unwrap();
        digests.push(summary["out"]["digest"].as_str().unwrap().to_string());
        bytes.push(std::fs::read(path(name)).unwrap());
    }
    ensure!(digests.iter().all(|d| *d == digests[0]), "digests differ: {digests:?}");
    ensure!(bytes.iter().all(|b| *b == bytes[0]), "export bytes differ");
    let text = String::from_utf8(bytes[0].clone()).unwrap();
    let records: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let turns: usize = records.iter().map(|r| r["turns"].as_array().unwrap().len()).sum();
    ensure!(records.len() == 6 && turns == 18, "{} triplets, {turns} turns", records.len());
    for rec in &records {
        ensure!(rec["synthesis"]["vote"]["m"] == 3, "vote m is {}", rec["synthesis"]["vote"]["m"]);
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("6 triplets / 18 turns, digest {} across 3 runs", &digests[0][..12]))
}

fn created_at() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap()
}

fn job_of(concepts: Vec<ConceptSpec>) -> SynthesisJob {
    let mut job = SynthesisJob::new("acc", concepts);
    job.seed = 99;
    job.created_at = Some(created_at());
    job
}

fn run(job: &SynthesisJob, script: MockScript) -> (JobOutput, Arc<MockBackend>) {
    let images = MemoryImages::new(
        job.concepts.iter().flat_map(|c| (0..c.images.len()).map(move |i| fixture_image(&c.id, i))),
    );
    let mock = Arc::new(MockBackend::new(script));
    let engine = Engine::new(Arc::new(Gateway::single(mock.clone())), Arc::new(images));
    let output = runtime().block_on(engine.run_job(job)).expect("job runs");
    (output, mock)
}

fn mentions(text: &str, phrase: &str) -> bool {
    text.to_lowercase().contains(&phrase.to_lowercase())
}

fn domain_concept(id: &str, target: &str, unrelated: &str, images: usize) -> ConceptSpec {
    let mut c = fixture_concept(id, Category::DomainExpertise, target, unrelated, images);
    c.domain = Some("medicine".into());
    c
}

// 5. Q2 names k_d and never k_t; a scripted leak is retried once, flagged,
// and kept out of the approved export.
fn c5_contrastive() -> Outcome {
    let clean = job_of(vec![
        fixture_concept("gw", Category::AbstractConcept, "global warming", "transportation", 3),
        fixture_concept("max", Category::PersonalizedEntity, "Max the dog", "a violin", 2),
        domain_concept("pe", "pleural effusion", "cooking", 3),
    ]);
    let (out, _) = run(&clean, MockScript::default());
    ensure!(out.triplets.len() == 8, "{} clean triplets", out.triplets.len());
    for t in &out.triplets {
        let q2 = &t.turn(Phase::Contrastive).unwrap().question;
        ensure!(mentions(q2, &t.unrelated_knowledge), "{}: Q2 lacks k_d: {q2}", t.record_id);
        ensure!(!mentions(q2, &t.target_knowledge), "{}: Q2 leaks k_t: {q2}", t.record_id);
        ensure!(t.flags.is_empty(), "{}: unexpected flags {:?}", t.record_id, t.flags);
    }

    let leaky = job_of(vec![domain_concept("leak", "pleural effusion", "cooking", 1)]);
    let script = MockScript::default()
        .with_priority_rule(MockRule::for_purpose(RequestPurpose::ContrastiveQuestion, &["Is {target} visible here?"]));
    let (bad, mock) = run(&leaky, script);
    let attempts = mock.calls().iter().filter(|c| c.purpose == RequestPurpose::ContrastiveQuestion).count();
    let flagged = &bad.triplets[0];
    ensure!(attempts == 2, "{attempts} contrastive question attempts");
    ensure!(flagged.flags == [TripletFlag::ContrastivePostCheckFailed], "flags {:?}", flagged.flags);
    ensure!(bad.report.contrastive_post_check_failed == 1, "report does not count the flag");

    let store = CurationStore::in_memory();
    for t in out.triplets.iter().chain(&bad.triplets) {
        store.record_dialogue(t.clone()).map_err(|e| e.to_string())?;
    }
    for t in &out.triplets {
        store.review(&t.record_id, ReviewRequest::approve("qa")).map_err(|e| e.to_string())?;
    }
    let export = store.export_approved(StructureMode::Full).map_err(|e| e.to_string())?;
    let text = String::from_utf8(export.bytes).unwrap();
    let violations = validate_lines(&text);
    let leaks = violations.iter().filter(|v| v.rule.contains("leak")).count();
    ensure!(violations.is_empty(), "export violations: {violations:?}");
    ensure!(export.manifest.record_count == 8 && !text.contains(&flagged.record_id), "flagged record was exported");

    // Approving the leak anyway cannot smuggle it into an export.
    store.review(&flagged.record_id, ReviewRequest::approve("qa")).map_err(|e| e.to_string())?;
    ensure!(store.export_approved(StructureMode::Full).is_err(), "leaky record exported after approval");
    Ok(format!("8/8 clean Q2 name k_d, 0 name k_t; leak retried once and flagged; {leaks} leaks in export"))
}

fn contrastive_rule(answers: &[&str]) -> MockScript {
    MockScript::default().with_rule(MockRule::for_purpose(RequestPurpose::ContrastiveAnswer, answers))
}

// 6. Scripted three-candidate votes and the single-pass configuration.
fn c6_voting() -> Outcome {
    const NEG: &str = "No, this image is not related to {unrelated}.";
    const AFF: &str = "Yes, it shows {unrelated}.";
    const OTHER: &str = "The image shows a busy street.";
    let one = || job_of(vec![fixture_concept("gw", Category::AbstractConcept, "global warming", "transportation", 1)]);

    // Hand-labelled buckets: strict majority of negations, then a three-way tie.
    let (out, _) = run(&one(), contrastive_rule(&[AFF, NEG, NEG]));
    let t = &out.triplets[0];
    let vote = t.vote.as_ref().unwrap();
    ensure!(vote.buckets == [Bucket::Affirmation, Bucket::Negation, Bucket::Negation], "buckets {:?}", vote.buckets);
    ensure!(vote.winner_index == 1 && !vote.tie_flag && t.flags.is_empty(), "strict majority picked {vote:?}");
    ensure!(t.turn(Phase::Contrastive).unwrap().answer == "No, this image is not related to transportation.", "winner text");
    ensure!(t.turn(Phase::Contrastive).unwrap().answer_provenance == Provenance::MajorityVote, "provenance");

    let (out, _) = run(&one(), contrastive_rule(&[OTHER, AFF, NEG]));
    let t = &out.triplets[0];
    let vote = t.vote.as_ref().unwrap();
    ensure!(vote.tie_flag && vote.winner_bucket == Bucket::Negation && vote.winner_index == 2, "tie picked {vote:?}");
    ensure!(t.flags.contains(&TripletFlag::VoteTie), "tie not flagged: {:?}", t.flags);

    let (out, _) = run(&one(), contrastive_rule(&[AFF, NEG, AFF]));
    let vote = out.triplets[0].vote.as_ref().unwrap();
    ensure!(vote.winner_bucket == Bucket::Affirmation && !vote.tie_flag, "affirmation majority picked {vote:?}");
    ensure!(out.triplets[0].flags.contains(&TripletFlag::VoteNonNegation), "non-negation winner not flagged");

    let mut single = one();
    single.vote_m = 1;
    let (out, mock) = run(&single, contrastive_rule(&[AFF, NEG, NEG]));
    let draws = mock.calls().iter().filter(|c| c.purpose == RequestPurpose::ContrastiveAnswer).count();
    let t = &out.triplets[0];
    ensure!(draws == 1 && t.vote.as_ref().unwrap().m == 1, "single pass drew {draws}");
    ensure!(t.turn(Phase::Contrastive).unwrap().answer_provenance == Provenance::BaseModel, "single-pass provenance");
    Ok("strict majority, negation tie-break with tie flag, non-negation flag, m=1".into())
}

// 7. Turn counts and weight sets per structure mode.
fn c7_structure_modes() -> Outcome {
    let job = job_of(vec![
        fixture_concept("gw", Category::AbstractConcept, "global warming", "transportation", 2),
        domain_concept("pe", "pleural effusion", "cooking", 2),
    ]);
    let (out, _) = run(&job, MockScript::default());
    let records: Vec<TrainingRecord> =
        out.triplets.iter().map(|t| TrainingRecord::from_triplet(t, ReviewInfo::pending())).collect();
    let mut summary = Vec::new();
    for (mode, turns, weights) in [
        (StructureMode::Full, 3, vec![0.2, 0.3, 0.5]),
        (StructureMode::CaptionTarget, 2, vec![0.2, 0.5]),
        (StructureMode::TargetOnly, 1, vec![0.5]),
    ] {
        let export = render_export(&records, mode, false).map_err(|e| e.to_string())?;
        let text = String::from_utf8(export.bytes).unwrap();
        ensure!(validate_lines(&text).is_empty(), "{} export does not validate", mode.as_str());
        for line in text.lines() {
            let rec = TrainingRecord::from_json(line).unwrap();
            ensure!(rec.turns.len() == turns, "{}: {} turns", mode.as_str(), rec.turns.len());
            let got: Vec<f64> = rec.turns.iter().map(|t| t.loss_weight).collect();
            ensure!(got == weights, "{}: weights {got:?}", mode.as_str());
        }
        let phases: BTreeSet<Phase> = export.manifest.weights.keys().copied().collect();
        ensure!(phases.len() == turns, "{} manifest weights {:?}", mode.as_str(), export.manifest.weights);
        summary.push(format!("{}={turns}", mode.as_str()));
    }
    Ok(summary.join(", "))
}

// 8. Twelve template questions over a ten-template library.
fn c8_rotation() -> Outcome {
    let job = job_of(vec![fixture_concept("gw", Category::AbstractConcept, "global warming", "transportation", 12)]);
    ensure!(sample_library().len() == 10, "library has {} templates", sample_library().len());
    let (out, _) = run(&job, MockScript::default());
    ensure!(out.triplets.len() == 12, "{} triplets", out.triplets.len());
    let used: Vec<usize> = out.triplets.iter().map(|t| t.templates.target_template_index.unwrap()).collect();
    let expected: Vec<usize> = (0..12).map(|i| seeded_permutation(job.seed, 10)[i % 10] + 1).collect();
    ensure!(used == expected, "used {used:?}, permutation {expected:?}");
    let first_cycle: BTreeSet<usize> = used[..10].iter().copied().collect();
    ensure!(first_cycle == (1..=10).collect(), "first cycle {first_cycle:?}");
    ensure!(used[10..] == used[..2], "no wrap: {used:?}");
    let library = sample_library();
    for (t, index) in out.triplets.iter().zip(&used) {
        let q3 = &t.turn(Phase::Target).unwrap().question;
        let template = &library.get(*index).unwrap().text;
        ensure!(*q3 == template.replace(PLACEHOLDER, "global warming"), "{}: Q3 {q3}", t.record_id);
    }
    let dump = serde_json::to_string(&out.triplets).unwrap();
    ensure!(!dump.contains(PLACEHOLDER), "output contains the placeholder");
    Ok(format!("used {used:?}"))
}

// 9. Random review events, then a replay from the log alone.
fn c9_replay() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let job = job_of(vec![
        fixture_concept("gw", Category::AbstractConcept, "global warming", "transportation", 6),
        domain_concept("pe", "pleural effusion", "cooking", 6),
    ]);
    let (out, _) = run(&job, MockScript::default());
    let store = CurationStore::open(dir.path()).map_err(|e| e.to_string())?;
    let ids: Vec<String> = out.triplets.iter().map(|t| t.record_id.clone()).collect();
    for t in &out.triplets {
        store.record_dialogue(t.clone()).map_err(|e| e.to_string())?;
    }

    // Expected statuses from the transition rules, tracked independently.
    let mut model: BTreeMap<String, ReviewStatus> = ids.iter().map(|id| (id.clone(), ReviewStatus::Pending)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let (mut applied, mut refused) = (0, 0);
    while applied < 50 {
        let id = &ids[rng.random_range(0..ids.len())];
        let current = model[id];
        let (request, allowed, next) = match rng.random_range(0..3) {
            0 => (ReviewRequest::approve("r"), current != ReviewStatus::Rejected, ReviewStatus::Approved),
            1 => (ReviewRequest::reject("r"), current != ReviewStatus::Rejected, ReviewStatus::Rejected),
            _ => (
                ReviewRequest::edit("r", Phase::Target, &format!("Edited answer {applied}.")),
                true,
                ReviewStatus::Edited,
            ),
        };
        match store.review(id, request) {
            Ok(state) => {
                ensure!(allowed, "{id}: transition from {current:?} should be refused");
                ensure!(state.status() == next, "{id}: status {:?}, expected {next:?}", state.status());
                model.insert(id.clone(), next);
                applied += 1;
            }
            Err(e) => {
                ensure!(!allowed, "{id}: refused a legal transition from {current:?}: {e}");
                refused += 1;
            }
        }
    }

    let live = store.records();
    drop(store);
    let replayed = CurationStore::open(dir.path()).map_err(|e| e.to_string())?;
    ensure!(replayed.records() == live, "replayed states differ from the live store");
    for rec in &live {
        ensure!(rec.review.status == model[&rec.record_id], "{}: {:?} vs model", rec.record_id, rec.review.status);
    }

    let export = replayed.export_approved(StructureMode::Full).map_err(|e| e.to_string())?;
    let exported: BTreeSet<String> = String::from_utf8(export.bytes)
        .unwrap()
        .lines()
        .map(|l| TrainingRecord::from_json(l).unwrap().record_id)
        .collect();
    let expected: BTreeSet<String> = model
        .iter()
        .filter(|(_, s)| matches!(s, ReviewStatus::Approved | ReviewStatus::Edited))
        .map(|(id, _)| id.clone())
        .collect();
    ensure!(exported == expected, "exported {exported:?}, expected {expected:?}");
    Ok(format!("50 events ({refused} refused), replay identical, {} exported", exported.len()))
}
