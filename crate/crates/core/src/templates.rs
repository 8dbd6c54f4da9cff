//! Question-template library: parsing, `[TARGET]` substitution and seeded rotation.
//!
//! File format: UTF-8, one template per line, `#` starts a comment line,
//! blank lines are ignored. Every template carries the literal `[TARGET]`
//! exactly once. Templates are indexed from 1 in file order.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const PLACEHOLDER: &str = "[TARGET]";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: template {index} \"{text}\" has placeholder count {count}")]
    PlaceholderCount { line: usize, index: usize, text: String, count: usize },
    #[error("line {line}: duplicate of the template on line {first_line}")]
    Duplicate { line: usize, first_line: usize },
    #[error("empty template library")]
    Empty,
    #[error("cannot read template file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub index: usize,
    pub text: String,
}

impl QuestionTemplate {
    /// Substitutes `knowledge` for the placeholder.
    pub fn instantiate(&self, knowledge: &str) -> String {
        instantiate(self, knowledge)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateLibrary {
    templates: Vec<QuestionTemplate>,
}

impl TemplateLibrary {
    pub fn parse(source: &str) -> Result<Self, TemplateError> {
        let (library, mut errors) = parse_all(source);
        if errors.is_empty() {
            Ok(library)
        } else {
            Err(errors.remove(0))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let bytes = std::fs::read(path.as_ref()).map_err(|e| TemplateError::Io(e.to_string()))?;
        let source = String::from_utf8(bytes).map_err(|e| TemplateError::Io(format!("not UTF-8: {e}")))?;
        Self::parse(&source)
    }

    /// Builds a library from in-memory texts, applying the same checks as a file.
    pub fn from_texts<I, S>(texts: I) -> Result<Self, TemplateError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let joined: Vec<String> = texts.into_iter().map(|s| s.as_ref().to_string()).collect();
        Self::parse(&joined.join("\n"))
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Looks a template up by its 1-based index.
    pub fn get(&self, index: usize) -> Option<&QuestionTemplate> {
        index.checked_sub(1).and_then(|i| self.templates.get(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = &QuestionTemplate> {
        self.templates.iter()
    }
}

/// Reports every problem in a template file instead of stopping at the first.
pub fn lint(source: &str) -> Vec<TemplateError> {
    parse_all(source).1
}

fn parse_all(source: &str) -> (TemplateLibrary, Vec<TemplateError>) {
    let mut templates = Vec::new();
    let mut errors = Vec::new();
    let mut first_seen: HashMap<String, usize> = HashMap::new();
    let mut index = 0;
    for (i, raw) in source.lines().enumerate() {
        let line = i + 1;
        let text = raw.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        index += 1;
        let count = text.matches(PLACEHOLDER).count();
        if count != 1 {
            errors.push(TemplateError::PlaceholderCount { line, index, text: text.to_string(), count });
            continue;
        }
        if text.replace(PLACEHOLDER, "").trim().is_empty() {
            errors.push(TemplateError::Parse { line, message: "template has no text besides the placeholder".into() });
            continue;
        }
        if let Some(&first_line) = first_seen.get(text) {
            errors.push(TemplateError::Duplicate { line, first_line });
            continue;
        }
        first_seen.insert(text.to_string(), line);
        templates.push(QuestionTemplate { index, text: text.to_string() });
    }
    if templates.is_empty() && errors.is_empty() {
        errors.push(TemplateError::Empty);
    }
    (TemplateLibrary { templates }, errors)
}

pub fn instantiate(template: &QuestionTemplate, knowledge: &str) -> String {
    template.text.replacen(PLACEHOLDER, knowledge.trim(), 1)
}

/// Position in a seeded cyclic traversal of a template library.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationState {
    pub seed: u64,
    pub cursor: usize,
    /// Zero-based positions into the library, in traversal order.
    pub permutation: Vec<usize>,
}

impl RotationState {
    pub fn new(seed: u64, library_len: usize) -> Self {
        Self { seed, cursor: 0, permutation: seeded_permutation(seed, library_len) }
    }

    pub fn for_library(seed: u64, library: &TemplateLibrary) -> Self {
        Self::new(seed, library.len())
    }
}

/// Fisher-Yates shuffle of `0..len` driven by a ChaCha8 stream seeded with `seed`.
pub fn seeded_permutation(seed: u64, len: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
}

/// Returns the template under the cursor and the advanced state.
///
/// Panics if the library is empty; libraries are non-empty by construction.
pub fn next_template<'a>(state: &RotationState, library: &'a TemplateLibrary) -> (&'a QuestionTemplate, RotationState) {
    assert!(!library.is_empty(), "template library is empty");
    let mut state = if state.permutation.len() == library.len() {
        state.clone()
    } else {
        RotationState::new(state.seed, library.len())
    };
    let position = state.permutation[state.cursor % library.len()];
    state.cursor = (state.cursor + 1) % library.len();
    (&library.templates[position], state)
}

/// Sample templates for personalized entities and abstract concepts, in
/// library order.
pub const SAMPLE_TEMPLATES: [&str; 10] = [
    "Is there any connection between this image content and [TARGET]?",
    "How does this image relate to [TARGET]?",
    "When examining this image, can you identify [TARGET]?",
    "What visual elements in this image might be associated with [TARGET]?",
    "Does this image demonstrate or represent [TARGET] in any way?",
    "Can you establish any relationship between the visual content and [TARGET]?",
    "How might this image be interpreted in relation to [TARGET]?",
    "Are there visual indicators in this image that suggest a connection to [TARGET]?",
    "To what extent does this image convey or embody [TARGET]?",
    "Would you consider this image to be relevant to [TARGET]?",
];

pub fn sample_library() -> TemplateLibrary {
    TemplateLibrary::from_texts(SAMPLE_TEMPLATES).expect("sample templates are valid")
}
