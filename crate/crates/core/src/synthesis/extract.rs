use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::derive_seed;
use crate::text::normalize;

/// Parses a model's concept list: one concept per line (or `;`-separated),
/// bullets and numbering stripped, duplicates dropped after normalization.
pub fn parse_concept_list(text: &str) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for raw in text.lines().flat_map(|l| l.split(';')) {
        let item = raw
            .trim()
            .trim_start_matches(['-', '*', '•'])
            .trim_start_matches(|c: char| c.is_ascii_digit())
            .trim_start_matches(['.', ')'])
            .trim()
            .trim_end_matches(['.', ','])
            .trim();
        if item.is_empty() {
            continue;
        }
        if seen.insert(normalize(item)) {
            out.push(item.to_string());
        }
    }
    out
}

/// Picks a distractor for `target`, skipping entries that overlap it.
pub fn pick_distractor(target: &str, pool: &[String], seed: u64) -> Option<String> {
    let t = normalize(target);
    let eligible: Vec<&String> = pool
        .iter()
        .filter(|d| {
            let d = normalize(d);
            !d.is_empty() && !d.contains(&t) && !t.contains(&d)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["distractor", &t]));
    eligible.choose(&mut rng).map(|d| d.to_string())
}

/// Pairs each extracted concept with a seeded distractor from `pool`.
/// Concepts without an eligible distractor are skipped.
pub fn pair_with_distractors(concepts: &[String], pool: &[String], seed: u64) -> Vec<(String, String)> {
    concepts
        .iter()
        .filter_map(|c| pick_distractor(c, pool, seed).map(|d| (c.clone(), d)))
        .collect()
}
