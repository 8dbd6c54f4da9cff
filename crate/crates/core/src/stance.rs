//! Cue-based stance detection over free-text answers.
//!
//! Only the first sentence is inspected, after normalization. A leading
//! yes/no word decides first; otherwise negation phrases are checked before
//! affirmation phrases.

use serde::{Deserialize, Serialize};

use crate::domain::Bucket;
use crate::text::{first_sentence, words};

const LEADING_NEGATION: &[&str] = &["no", "nope", "not", "none", "never", "neither", "nah"];
const LEADING_AFFIRMATION: &[&str] = &["yes", "yeah", "yep", "yup", "correct", "indeed", "absolutely", "certainly", "definitely", "sure"];

const NEGATION_WORDS: &[&str] = &[
    "no", "not", "none", "never", "neither", "nor", "cannot", "unrelated", "irrelevant", "without", "nothing",
    "isn't", "aren't", "doesn't", "don't", "didn't", "wasn't", "weren't", "can't", "couldn't", "won't", "shouldn't",
    "hasn't", "haven't",
];
const NEGATION_PHRASES: &[&[&str]] = &[&["no", "connection"], &["no", "relation"], &["there", "is", "no"]];
const AFFIRMATION_WORDS: &[&str] = &["yes", "indeed", "correct", "certainly", "definitely", "absolutely"];
const AFFIRMATION_PHRASES: &[&[&str]] = &[
    &["it", "does"],
    &["it", "is"],
    &["this", "is"],
    &["is", "related"],
    &["is", "relevant"],
    &["is", "connected"],
    &["can", "identify"],
    &["can", "see"],
];

pub fn classify_response(text: &str) -> Bucket {
    let tokens = words(first_sentence(text));
    let Some(first) = tokens.first() else {
        return Bucket::Other;
    };
    if LEADING_NEGATION.contains(&first.as_str()) {
        return Bucket::Negation;
    }
    if LEADING_AFFIRMATION.contains(&first.as_str()) {
        return Bucket::Affirmation;
    }
    if tokens.iter().any(|t| t.ends_with("n't")) || has_any(&tokens, NEGATION_WORDS, NEGATION_PHRASES) {
        return Bucket::Negation;
    }
    if has_any(&tokens, AFFIRMATION_WORDS, AFFIRMATION_PHRASES) {
        return Bucket::Affirmation;
    }
    Bucket::Other
}

fn has_any(tokens: &[String], singles: &[&str], phrases: &[&[&str]]) -> bool {
    tokens.iter().any(|t| singles.contains(&t.as_str())) || phrases.iter().any(|p| contains_sequence(tokens, p))
}

fn contains_sequence(tokens: &[String], phrase: &[&str]) -> bool {
    phrase.len() <= tokens.len()
        && tokens.windows(phrase.len()).any(|w| w.iter().zip(phrase).all(|(a, b)| a == b))
}

/// Stance of an evaluation answer to a yes/no recognition probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stance {
    Positive,
    Negative,
    Unknown,
}

pub fn normalize_yes_no(answer: &str) -> Stance {
    match classify_response(answer) {
        Bucket::Affirmation => Stance::Positive,
        Bucket::Negation => Stance::Negative,
        Bucket::Other => Stance::Unknown,
    }
}
