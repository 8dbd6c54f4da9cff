//! Text normalization shared by validation, post-checks and stance cues.

/// Case-folds, trims and collapses internal whitespace runs to one space.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// True when `needle` occurs in `haystack` after normalizing both.
pub fn contains_normalized(haystack: &str, needle: &str) -> bool {
    let needle = normalize(needle);
    !needle.is_empty() && normalize(haystack).contains(&needle)
}

/// Replaces every case-insensitive occurrence of `from` in `text` with `to`.
///
/// Matching runs on the normalized text; the rest of `text` is left untouched
/// when the phrase is found verbatim (the common case for template output).
pub fn replace_phrase(text: &str, from: &str, to: &str) -> String {
    if from.is_empty() {
        return text.to_string();
    }
    if text.contains(from) {
        return text.replace(from, to);
    }
    // Case-insensitive fallback over the whitespace-collapsed form.
    let normalized_text = collapse_whitespace(text);
    let lowered: Vec<(usize, char)> = normalized_text.char_indices().collect();
    let needle = normalize(from);
    let needle_chars: Vec<char> = needle.chars().collect();
    let mut out = String::with_capacity(normalized_text.len());
    let mut i = 0;
    while i < lowered.len() {
        if matches_at(&lowered, i, &needle_chars) {
            out.push_str(to);
            i += needle_chars.len();
        } else {
            out.push(lowered[i].1);
            i += 1;
        }
    }
    out
}

fn matches_at(chars: &[(usize, char)], start: usize, needle: &[char]) -> bool {
    if start + needle.len() > chars.len() {
        return false;
    }
    chars[start..start + needle.len()]
        .iter()
        .zip(needle)
        .all(|((_, c), n)| {
            let mut lower = c.to_lowercase();
            lower.next() == Some(*n) && lower.next().is_none()
        })
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// First sentence of `text`, ending at the first `.`, `!`, `?` or newline.
pub fn first_sentence(text: &str) -> &str {
    let trimmed = text.trim_start();
    match trimmed.find(['.', '!', '?', '\n']) {
        Some(end) => &trimmed[..end],
        None => trimmed,
    }
}

/// Lowercased alphanumeric words, apostrophes kept so "isn't" stays one token.
pub fn words(text: &str) -> Vec<String> {
    normalize(text)
        .split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '’'))
        .filter(|w| !w.is_empty())
        .map(|w| w.replace('’', "'"))
        .collect()
}
