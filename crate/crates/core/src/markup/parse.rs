use std::fmt;

use serde::{Deserialize, Serialize};

use super::{segment, MarkedResponse, MarkedSentence, ANSWER_HEADER, UNSUPPORTED_HEADER};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseWarning {
    /// No `Answer:` heading; the whole text before any unsupported section was
    /// read as the answer.
    MissingAnswerHeader,
    CitationOutOfRange { sentence: usize, index: usize },
    /// Citation markers with no sentence to attach to.
    OrphanCitation { index: usize },
    /// An unsupported statement that matches no answer sentence.
    FreeFloatingUnsupported { text: String },
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseWarning::MissingAnswerHeader => write!(f, "no \"Answer:\" section"),
            ParseWarning::CitationOutOfRange { sentence, index } => {
                write!(f, "index {index} out of range (sentence {sentence})")
            }
            ParseWarning::OrphanCitation { index } => write!(f, "citation [{index}] has no sentence"),
            ParseWarning::FreeFloatingUnsupported { text } => {
                write!(f, "unsupported statement not in answer: {text:?}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub response: MarkedResponse,
    pub warnings: Vec<ParseWarning>,
    pub has_answer_header: bool,
}

/// Case-insensitive search for an ASCII needle; returns a byte offset.
fn find_ascii_ci(haystack: &str, needle: &str, from: usize) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    (from..=h.len().saturating_sub(n.len()))
        .find(|&i| h.len() >= n.len() && h[i..i + n.len()].eq_ignore_ascii_case(n))
}

fn locate_answer(raw: &str) -> Option<usize> {
    let mut offset = 0;
    for line in raw.split_inclusive('\n') {
        let lead = line.len() - line.trim_start().len();
        let rest = &line[lead..];
        if rest.len() >= ANSWER_HEADER.len()
            && rest.as_bytes()[..ANSWER_HEADER.len()].eq_ignore_ascii_case(ANSWER_HEADER.as_bytes())
        {
            return Some(offset + lead + ANSWER_HEADER.len());
        }
        offset += line.len();
    }
    None
}

/// Reads a `[digits]` marker starting at `chars[i]`; returns (number, end).
fn marker_at(chars: &[char], i: usize) -> Option<(usize, usize)> {
    if chars.get(i) != Some(&'[') {
        return None;
    }
    let mut j = i + 1;
    while j < chars.len() && chars[j].is_ascii_digit() {
        j += 1;
    }
    if j == i + 1 || chars.get(j) != Some(&']') {
        return None;
    }
    let digits: String = chars[i + 1..j].iter().collect();
    Some((digits.parse().unwrap_or(usize::MAX), j + 1))
}

/// Separates markers glued to sentence-final punctuation (`Y.[1] Z`) so the
/// segmenter sees the sentence boundary.
fn detach_trailing_markers(body: &str) -> String {
    let chars: Vec<char> = body.chars().collect();
    let mut out = String::with_capacity(body.len() + 8);
    for (i, &c) in chars.iter().enumerate() {
        out.push(c);
        if matches!(c, '.' | '?' | '!') && marker_at(&chars, i + 1).is_some() {
            out.push(' ');
        }
    }
    out
}

/// Splits a span into (leading markers, text without markers, inner markers).
fn strip_markers(span: &str) -> (Vec<usize>, String, Vec<usize>) {
    let chars: Vec<char> = span.chars().collect();
    let mut leading = Vec::new();
    let mut i = 0;
    loop {
        while i < chars.len() && chars[i].is_whitespace() {
            i += 1;
        }
        match marker_at(&chars, i) {
            Some((n, end)) => {
                leading.push(n);
                i = end;
            }
            None => break,
        }
    }
    let mut text = String::new();
    let mut inner = Vec::new();
    while i < chars.len() {
        if let Some((n, end)) = marker_at(&chars, i) {
            inner.push(n);
            let trimmed = text.trim_end().len();
            text.truncate(trimmed);
            i = end;
        } else {
            text.push(chars[i]);
            i += 1;
        }
    }
    let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    (leading, text, inner)
}

/// Removes every `[n]` marker from a sentence and tidies the whitespace left behind.
pub fn strip_citation_markers(text: &str) -> String {
    strip_markers(text).1
}

/// Parses a grounded response written in `[n]` markup.
///
/// Never fails. Citation indices outside `1..=working_set_size` are dropped
/// with a warning, and markers placed after sentence-final punctuation are
/// attached to the preceding sentence.
pub fn parse_marked_response(raw: &str, working_set_size: usize) -> ParsedResponse {
    let mut warnings = Vec::new();
    let answer_start = locate_answer(raw);
    if answer_start.is_none() {
        warnings.push(ParseWarning::MissingAnswerHeader);
    }
    let body_start = answer_start.unwrap_or(0);
    let (body, section) = match find_ascii_ci(raw, UNSUPPORTED_HEADER, body_start) {
        Some(pos) => (&raw[body_start..pos], Some(&raw[pos + UNSUPPORTED_HEADER.len()..])),
        None => (&raw[body_start..], None),
    };

    let mut raw_sentences: Vec<(String, Vec<usize>)> = Vec::new();
    for span in segment(&detach_trailing_markers(body)) {
        let (leading, text, inner) = strip_markers(&span.text);
        let mut own = Vec::new();
        match raw_sentences.last_mut() {
            Some((_, cites)) => cites.extend(leading),
            None if !text.is_empty() => own.extend(leading),
            None => warnings.extend(leading.into_iter().map(|index| ParseWarning::OrphanCitation { index })),
        }
        if text.is_empty() {
            match raw_sentences.last_mut() {
                Some((_, cites)) => cites.extend(inner),
                None => warnings.extend(inner.into_iter().map(|index| ParseWarning::OrphanCitation { index })),
            }
            continue;
        }
        own.extend(inner);
        raw_sentences.push((text, own));
    }

    let mut sentences = Vec::with_capacity(raw_sentences.len());
    for (i, (text, raw_cites)) in raw_sentences.into_iter().enumerate() {
        let mut kept = Vec::new();
        for index in raw_cites {
            if index == 0 || index > working_set_size {
                warnings.push(ParseWarning::CitationOutOfRange { sentence: i, index });
            } else {
                kept.push(index);
            }
        }
        sentences.push(MarkedSentence::new(text, kept));
    }

    let mut unsupported = Vec::new();
    if let Some(section) = section {
        let trimmed = section.trim();
        let is_none = trimmed.is_empty()
            || trimmed.eq_ignore_ascii_case("none.")
            || trimmed.eq_ignore_ascii_case("none");
        if !is_none {
            for line in trimmed.lines() {
                for span in segment(line) {
                    let (_, text, _) = strip_markers(&span.text);
                    if !text.is_empty() {
                        unsupported.push(text);
                    }
                }
            }
        }
    }
    for u in &unsupported {
        if !sentences.iter().any(|s| s.text == *u) {
            warnings.push(ParseWarning::FreeFloatingUnsupported { text: u.clone() });
        }
    }

    ParsedResponse {
        response: MarkedResponse { sentences, unsupported },
        warnings,
        has_answer_header: answer_start.is_some(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cites(p: &ParsedResponse) -> Vec<(String, Vec<usize>)> {
        p.response
            .sentences
            .iter()
            .map(|s| (s.text.clone(), s.citations.clone()))
            .collect()
    }

    #[test]
    fn full_grounded_output() {
        let raw = "Answer:\nX is Y [1]. Z holds [2].\n\nSentences Not Supported by Citations:\nNone.";
        let p = parse_marked_response(raw, 5);
        assert!(p.warnings.is_empty());
        assert!(p.has_answer_header);
        assert_eq!(
            cites(&p),
            [("X is Y.".to_string(), vec![1]), ("Z holds.".to_string(), vec![2])]
        );
        assert!(p.response.unsupported.is_empty());
    }

    #[test]
    fn out_of_range_citation_dropped() {
        let p = parse_marked_response("X is Y [7].", 5);
        assert_eq!(cites(&p), [("X is Y.".to_string(), vec![])]);
        assert!(p.warnings.contains(&ParseWarning::CitationOutOfRange { sentence: 0, index: 7 }));
        let msg = p.warnings.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(";");
        assert!(msg.contains("index 7 out of range"));
        assert!(p.warnings.contains(&ParseWarning::MissingAnswerHeader));
    }

    #[test]
    fn misplaced_citations_are_normalized() {
        // hand-assigned expectations for common placement mistakes
        let table: &[(&str, &[(&str, &[usize])])] = &[
            ("X is Y. [1] Z.", &[("X is Y.", &[1]), ("Z.", &[])]),
            ("X is Y.[1] Z.", &[("X is Y.", &[1]), ("Z.", &[])]),
            ("X is Y.[1][2]", &[("X is Y.", &[1, 2])]),
            ("X is Y. [2] [1]", &[("X is Y.", &[1, 2])]),
            ("X [1] is Y. Z [2].", &[("X is Y.", &[1]), ("Z.", &[2])]),
            ("[1] X is Y.", &[("X is Y.", &[1])]),
            ("X is Y [1][1].", &[("X is Y.", &[1])]),
            ("No stop at all [3]", &[("No stop at all", &[3])]),
        ];
        for (raw, expected) in table {
            let p = parse_marked_response(raw, 5);
            let want: Vec<(String, Vec<usize>)> =
                expected.iter().map(|(t, c)| (t.to_string(), c.to_vec())).collect();
            assert_eq!(cites(&p), want, "input {raw:?}");
        }
    }

    #[test]
    fn unsupported_section_lines() {
        let raw = "Answer:\nA is b [1]. Robert Wadlow was 8 feet 11 inches tall.\n\nSentences Not Supported by Citations:\nRobert Wadlow was 8 feet 11 inches tall.\n";
        let p = parse_marked_response(raw, 4);
        assert!(p.warnings.is_empty(), "{:?}", p.warnings);
        assert_eq!(p.response.unsupported, ["Robert Wadlow was 8 feet 11 inches tall."]);
        assert_eq!(p.response.unsupported_indices(), [1]);
    }

    #[test]
    fn free_floating_unsupported_flagged() {
        let raw = "Answer: A.\n\nSentences Not Supported by Citations:\nB.";
        let p = parse_marked_response(raw, 1);
        assert_eq!(p.response.unsupported, ["B."]);
        assert_eq!(p.warnings, [ParseWarning::FreeFloatingUnsupported { text: "B.".into() }]);
    }

    #[test]
    fn header_case_is_tolerated() {
        let raw = "answer:\nA [1].\nsentences not supported by citations:\nnone";
        let p = parse_marked_response(raw, 1);
        assert!(p.has_answer_header);
        assert!(p.warnings.is_empty());
        assert_eq!(cites(&p), [("A.".to_string(), vec![1])]);
    }

    #[test]
    fn orphan_marker_without_sentence() {
        let p = parse_marked_response("Answer:\n[2]", 3);
        assert!(p.response.sentences.is_empty());
        assert_eq!(p.warnings, [ParseWarning::OrphanCitation { index: 2 }]);
    }

    #[test]
    fn zero_index_is_out_of_range() {
        let p = parse_marked_response("Answer: A [0].", 3);
        assert_eq!(p.warnings, [ParseWarning::CitationOutOfRange { sentence: 0, index: 0 }]);
    }

    #[test]
    fn huge_marker_does_not_panic() {
        let p = parse_marked_response("Answer: A [99999999999999999999999].", 3);
        assert_eq!(p.response.sentences.len(), 1);
        assert_eq!(p.warnings.len(), 1);
    }
}
