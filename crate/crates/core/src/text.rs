//! Term normalization and phrase containment.
//!
//! Every component that asks "does this keyword occur in that text" goes
//! through [`contains_phrase`] over streams produced by [`terms`], so the
//! retrieval filter, the EK validity check and the hallucination metric
//! agree on what a match is.

/// Lowercased word stream with punctuation removed.
///
/// Words are maximal runs of Unicode alphanumeric characters; everything
/// else acts as a separator.
pub fn terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// True iff `needle` occurs as a contiguous run inside `haystack`.
///
/// An empty needle matches nothing.
pub fn contains_phrase<S: AsRef<str>>(haystack: &[S], needle: &[S]) -> bool {
    if needle.is_empty() || needle.len() > haystack.len() {
        return false;
    }
    haystack
        .windows(needle.len())
        .any(|window| window.iter().zip(needle).all(|(a, b)| a.as_ref() == b.as_ref()))
}

/// Phrase containment of a raw keyword in a pre-computed term stream.
pub fn stream_contains(stream: &[String], keyword: &str) -> bool {
    contains_phrase(stream, &terms(keyword))
}

/// Trim and collapse internal whitespace runs to a single space.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whitespace token count, used wherever a provider does not report usage.
pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
