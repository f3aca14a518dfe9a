use serde::{Deserialize, Serialize};

/// Tokens that end in a period but do not end a sentence. Compared lowercased.
pub const ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.", "st.", "mt.", "vs.", "e.g.", "i.e.",
    "u.s.", "u.k.", "a.k.a.", "approx.", "fig.", "lt.", "col.", "gen.", "sgt.", "capt.", "rev.",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub text: String,
    pub index: usize,
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '?' | '!')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201d}' | '\u{2019}' | ')')
}

/// Splits text into sentences.
///
/// Paragraphs (separated by blank lines) are split independently and their
/// whitespace is collapsed. A sentence ends at `.`, `?` or `!` (plus any
/// trailing closing quotes or parentheses) followed by whitespace or the end
/// of the paragraph, unless the word ending in `.` is in [`ABBREVIATIONS`].
pub fn segment(text: &str) -> Vec<SentenceSpan> {
    let mut out = Vec::new();
    for paragraph in paragraphs(text) {
        for s in split_paragraph(&paragraph) {
            out.push(SentenceSpan {
                text: s,
                index: out.len(),
            });
        }
    }
    out
}

/// Convenience wrapper returning only the sentence strings.
pub fn sentences(text: &str) -> Vec<String> {
    segment(text).into_iter().map(|s| s.text).collect()
}

fn paragraphs(text: &str) -> Vec<String> {
    let mut paras = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                paras.push(current.join(" "));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        paras.push(current.join(" "));
    }
    paras
        .into_iter()
        .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|p| !p.is_empty())
        .collect()
}

fn split_paragraph(p: &str) -> Vec<String> {
    let chars: Vec<char> = p.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if !is_terminal(chars[i]) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() && is_terminal(chars[j]) {
            j += 1;
        }
        while j < chars.len() && is_closer(chars[j]) {
            j += 1;
        }
        let at_gap = j == chars.len() || chars[j].is_whitespace();
        if at_gap && !(chars[i] == '.' && j == i + 1 && is_abbreviation(&chars[start..=i])) {
            let s: String = chars[start..j].iter().collect();
            let s = s.trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            start = j;
        }
        i = j;
    }
    let rest: String = chars[start..].iter().collect();
    let rest = rest.trim();
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out
}

/// `upto` ends with the period in question.
fn is_abbreviation(upto: &[char]) -> bool {
    let word_start = upto
        .iter()
        .rposition(|c| c.is_whitespace())
        .map(|p| p + 1)
        .unwrap_or(0);
    let word: String = upto[word_start..].iter().collect();
    let word = word.trim_start_matches(['(', '"', '\'', '\u{201c}']);
    let lower = word.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}
