//! Sentence segmentation and word tokenization.
//!
//! The segmenter is rule based: a sentence ends at a run of terminal
//! punctuation (`.`, `?`, `!`, optionally followed by closing quotes or
//! brackets) that is followed by whitespace or the end of the text, unless
//! the word carrying the period is a known abbreviation.

use unicode_segmentation::UnicodeSegmentation;

/// Abbreviations that never terminate a sentence when followed by a period.
/// Compared case-insensitively against the word immediately before the `.`.
pub const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc", "e.g", "i.e", "inc", "ltd", "co", "corp", "gov",
    "sen", "rep", "gen", "col", "lt", "sgt", "capt", "cmdr", "adm", "rev", "hon", "pres", "supt", "jan", "feb", "mar",
    "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "mon", "tue", "wed", "thu", "fri", "u.s", "u.k",
    "u.n", "mt", "ave", "blvd", "approx", "dept", "est", "fig", "al", "ph.d", "d.c", "a.m", "p.m",
];

const TERMINALS: [char; 3] = ['.', '?', '!'];
const CLOSERS: [char; 6] = ['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];

/// Splits `text` into trimmed sentence strings.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !TERMINALS.contains(&c) {
            i += 1;
            continue;
        }
        // consume the whole punctuation run, then trailing closers
        let mut j = i;
        while j < chars.len() && TERMINALS.contains(&chars[j].1) {
            j += 1;
        }
        let single_period = c == '.' && j - i == 1;
        while j < chars.len() && CLOSERS.contains(&chars[j].1) {
            j += 1;
        }
        let at_boundary = j == chars.len() || chars[j].1.is_whitespace();
        if at_boundary && !(single_period && is_abbreviation(&text[start..pos])) {
            let end = if j == chars.len() { text.len() } else { chars[j].0 };
            push_trimmed(&mut out, &text[start..end]);
            start = end;
        }
        i = j;
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let t = s.trim();
    if !t.is_empty() {
        out.push(t.to_string());
    }
}

/// True when the last whitespace-delimited word of `prefix` (the text right
/// before a period) is in the abbreviation list.
fn is_abbreviation(prefix: &str) -> bool {
    let word = prefix.rsplit(char::is_whitespace).next().unwrap_or("").trim_start_matches(['(', '"', '\'', '\u{201c}']);
    if word.is_empty() {
        return false;
    }
    let lower = word.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

/// Lowercased Unicode word segmentation; punctuation becomes separate tokens
/// and whitespace is dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_word_bounds().filter(|seg| !seg.chars().all(char::is_whitespace)).map(str::to_lowercase).collect()
}

/// Inverse of [`tokenize`] up to whitespace: tokens joined by single spaces.
pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terminal_punctuation_split() {
        assert_eq!(split_sentences("A. B? C!"), vec!["A.", "B?", "C!"]);
    }

    #[test]
    fn empty_text() {
        assert!(split_sentences("").is_empty());
        assert!(split_sentences("   \n ").is_empty());
    }

    #[test]
    fn abbreviation_does_not_split() {
        assert_eq!(split_sentences("Dr. Smith arrived."), vec!["Dr. Smith arrived."]);
    }

    #[test]
    fn quotes_stay_with_sentence() {
        assert_eq!(split_sentences("He said \"stop.\" Then left."), vec!["He said \"stop.\"", "Then left."]);
    }

    #[test]
    fn tokenizer_splits_punctuation_and_lowercases() {
        assert_eq!(tokenize("The Virus, a Major threat!"), vec!["the", "virus", ",", "a", "major", "threat", "!"]);
        assert_eq!(tokenize("don't stop 3.5"), vec!["don't", "stop", "3.5"]);
    }
}
