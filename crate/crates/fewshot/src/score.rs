//! Exact-match scoring.

fn normalize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let trimmed = lowered
        .trim_end()
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace());
    trimmed.split_whitespace().map(str::to_string).collect()
}

/// 1 iff the word sequences agree after lowercasing and stripping trailing
/// punctuation.
pub fn score_exact_match(prediction: &str, gold: &str) -> u8 {
    u8::from(normalize(prediction) == normalize(gold))
}
