//! Normalization and deterministic matching of free clinical text.

use alloc::string::String;

/// Lowercases, maps every non-alphanumeric character to a space and
/// collapses runs of whitespace.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

/// Word-boundary containment of `needle` in `haystack`, both normalized first.
pub fn contains_phrase(haystack: &str, needle: &str) -> bool {
    let needle = normalize(needle);
    if needle.is_empty() {
        return false;
    }
    let haystack = normalize(haystack);
    let mut padded_hay = String::with_capacity(haystack.len() + 2);
    padded_hay.push(' ');
    padded_hay.push_str(&haystack);
    padded_hay.push(' ');
    let mut padded_needle = String::with_capacity(needle.len() + 2);
    padded_needle.push(' ');
    padded_needle.push_str(&needle);
    padded_needle.push(' ');
    padded_hay.contains(&padded_needle)
}

/// Case- and punctuation-insensitive equality.
pub fn same_text(a: &str, b: &str) -> bool {
    let a = normalize(a);
    !a.is_empty() && a == normalize(b)
}

/// Deterministic half of clinical text matching: normalized equality against
/// any gold text or accepted synonym.
pub fn deterministic_match<'a, I>(predicted: &str, accepted: I) -> bool
where
    I: IntoIterator<Item = &'a str>,
{
    let predicted = normalize(predicted);
    if predicted.is_empty() {
        return false;
    }
    accepted.into_iter().any(|g| normalize(g) == predicted)
}

/// Matches a predicted clinical term against gold texts and synonyms.
///
/// The deterministic comparison runs first and short-circuits; `judge` is
/// consulted only when it fails and should return whether a judge asserted
/// semantic equivalence with evidence.
pub fn match_clinical_text<F>(predicted: &str, gold: &[String], synonyms: &[String], judge: F) -> bool
where
    F: FnOnce() -> bool,
{
    let accepted = gold.iter().chain(synonyms.iter()).map(String::as_str);
    if deterministic_match(predicted, accepted) {
        return true;
    }
    judge()
}
