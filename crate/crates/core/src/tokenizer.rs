//! Finite-state tokenization, sentence splitting and report sectioning.
//!
//! Offsets are UTF-8 byte offsets into the raw report text, so
//! `&text[token.start..token.end] == token.text` always holds.

use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_ABBREVIATIONS: &str = include_str!("../data/abbreviations.txt");

/// Section headers recognised by [`sectionize`] when no other set is configured.
pub const DEFAULT_SECTION_HEADERS: [&str; 5] =
    ["History", "Comparison", "Impression", "Findings", "Indication"];

/// Name of the section holding text that precedes the first header.
pub const PREAMBLE: &str = "preamble";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TokenKind {
    Word,
    Number,
    /// A number with a unit glued on, e.g. `5mm`.
    Measurement,
    Punct,
    /// Hyphen-joined run such as `ground-glass`.
    Compound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub kind: TokenKind,
}

impl Token {
    pub fn is_punct(&self, s: &str) -> bool {
        self.kind == TokenKind::Punct && self.text == s
    }

    fn is_integer(&self) -> bool {
        self.kind == TokenKind::Number && self.text.bytes().all(|b| b.is_ascii_digit())
    }
}

/// Splits `text` into tokens.
///
/// Alphanumeric runs form tokens. A `.` stays inside a run only between
/// two digits (`1.2`), a `-` only between two alphanumerics
/// (`ground-glass`). Every other non-whitespace character is its own
/// punctuation token.
pub fn tokenize(text: &str) -> Vec<Token> {
    tokenize_span(text, 0..text.len())
}

/// Tokenizes `text[span]`, reporting offsets relative to the whole of `text`.
pub fn tokenize_span(text: &str, span: Range<usize>) -> Vec<Token> {
    let chars: Vec<(usize, char)> = text[span.clone()]
        .char_indices()
        .map(|(i, c)| (i + span.start, c))
        .collect();
    let offset_at = |i: usize| chars.get(i).map_or(span.end, |&(o, _)| o);

    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i].1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if !c.is_alphanumeric() {
            let (start, end) = (offset_at(i), offset_at(i + 1));
            tokens.push(Token {
                text: text[start..end].to_string(),
                start,
                end,
                kind: TokenKind::Punct,
            });
            i += 1;
            continue;
        }

        let first = i;
        let mut hyphenated = false;
        i += 1;
        while i < chars.len() {
            let c = chars[i].1;
            if c.is_alphanumeric() {
                i += 1;
                continue;
            }
            let prev = chars[i - 1].1;
            let next = chars.get(i + 1).map(|&(_, c)| c);
            match (c, next) {
                ('.', Some(n)) if prev.is_ascii_digit() && n.is_ascii_digit() => i += 1,
                ('-', Some(n)) if prev.is_alphanumeric() && n.is_alphanumeric() => {
                    hyphenated = true;
                    i += 1;
                }
                _ => break,
            }
        }

        let (start, end) = (offset_at(first), offset_at(i));
        let surface = &text[start..end];
        let kind = if hyphenated {
            TokenKind::Compound
        } else if surface.chars().all(|c| c.is_ascii_digit() || c == '.') {
            TokenKind::Number
        } else if surface.starts_with(|c: char| c.is_ascii_digit()) {
            TokenKind::Measurement
        } else {
            TokenKind::Word
        };
        tokens.push(Token {
            text: surface.to_string(),
            start,
            end,
            kind,
        });
    }
    tokens
}

/// Case-insensitive set of abbreviations whose final period is not a sentence end.
#[derive(Debug, Clone)]
pub struct Abbreviations {
    entries: HashSet<String>,
    longest: usize,
}

impl Abbreviations {
    /// Parses one abbreviation per line; blank lines and `#` comments are skipped.
    pub fn parse(source: &str) -> Self {
        let entries: HashSet<String> = source
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        let longest = entries
            .iter()
            .map(|e| tokenize(e).len())
            .max()
            .unwrap_or(0);
        Abbreviations { entries, longest }
    }

    pub fn contains(&self, s: &str) -> bool {
        self.entries.contains(&s.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when the period at `tokens[dot]` closes a listed abbreviation.
    fn closes_abbreviation(&self, tokens: &[Token], dot: usize) -> bool {
        let mut first = dot;
        while first > 0 && dot - first + 1 < self.longest && tokens[first - 1].end == tokens[first].start {
            first -= 1;
        }
        (first..dot).any(|from| {
            let glued: String = tokens[from..=dot].iter().map(|t| t.text.as_str()).collect();
            self.contains(&glued)
        })
    }
}

impl Default for Abbreviations {
    fn default() -> Self {
        Abbreviations::parse(DEFAULT_ABBREVIATIONS)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    /// Range into the token sequence the sentence was split from.
    pub token_range: Range<usize>,
    /// First token after a leading list marker such as `1.`; equals
    /// `token_range.start` when there is none.
    pub body_start: usize,
    pub section: String,
}

impl Sentence {
    pub fn body(&self) -> Range<usize> {
        self.body_start..self.token_range.end
    }

    pub fn has_list_marker(&self) -> bool {
        self.body_start > self.token_range.start
    }
}

fn is_terminator(t: &Token) -> bool {
    t.kind == TokenKind::Punct && matches!(t.text.as_str(), "." | "!" | "?")
}

fn is_closer(t: &Token) -> bool {
    t.kind == TokenKind::Punct && matches!(t.text.as_str(), ")" | "]" | "\"" | "'")
}

/// Length of a numbered-list marker (`1.` or `2)`) starting at `at`, or 0.
fn list_marker_len(tokens: &[Token], at: usize) -> usize {
    let (Some(num), Some(dot)) = (tokens.get(at), tokens.get(at + 1)) else {
        return 0;
    };
    let followed_by_space = tokens.get(at + 2).is_none_or(|next| next.start > dot.end);
    if num.is_integer()
        && num.text.len() <= 2
        && (dot.is_punct(".") || dot.is_punct(")"))
        && num.end == dot.start
        && followed_by_space
    {
        2
    } else {
        0
    }
}

/// Splits a token sequence into sentences labelled with `section`.
///
/// A sentence ends after `.`, `!` or `?` (plus any closing brackets or
/// quotes), except when the period directly follows a number or closes a
/// known abbreviation, or when a word follows it with no space in between
/// (the inner dots of `a.m.`). A numbered-list marker at the start of a sentence is
/// kept in the sentence's range but excluded from its body.
pub fn split_sentences(tokens: &[Token], abbreviations: &Abbreviations, section: &str) -> Vec<Sentence> {
    let mut sentences = Vec::new();
    let mut start = 0;
    while start < tokens.len() {
        let body_start = start + list_marker_len(tokens, start);
        let mut i = body_start;
        let mut end = tokens.len();
        while i < tokens.len() {
            let t = &tokens[i];
            if is_terminator(t) {
                let after_number = t.text == "."
                    && i > 0
                    && tokens[i - 1].end == t.start
                    && tokens[i - 1].kind == TokenKind::Number;
                let abbreviated = t.text == "." && abbreviations.closes_abbreviation(tokens, i);
                let glued_to_word = tokens
                    .get(i + 1)
                    .is_some_and(|n| n.start == t.end && n.kind != TokenKind::Punct);
                if !after_number && !abbreviated && !glued_to_word {
                    let mut j = i + 1;
                    while j < tokens.len() && (is_terminator(&tokens[j]) || is_closer(&tokens[j])) {
                        j += 1;
                    }
                    end = j;
                    break;
                }
            }
            i += 1;
        }
        sentences.push(Sentence {
            token_range: start..end,
            body_start,
            section: section.to_string(),
        });
        start = end;
    }
    sentences
}

/// Configured set of section header names, matched case-insensitively.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionHeaders(Vec<String>);

impl SectionHeaders {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        SectionHeaders(names.into_iter().map(Into::into).collect())
    }

    fn canonical(&self, candidate: &str) -> Option<&str> {
        let candidate = candidate.trim();
        self.0
            .iter()
            .find(|h| h.eq_ignore_ascii_case(candidate))
            .map(String::as_str)
    }
}

impl Default for SectionHeaders {
    fn default() -> Self {
        SectionHeaders::new(DEFAULT_SECTION_HEADERS)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    /// Span of the header line prefix, e.g. `History:`; `None` for the preamble.
    pub header: Option<Range<usize>>,
    pub body: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub study_id: String,
    pub text: String,
    pub sections: Vec<Section>,
}

impl Report {
    pub fn section_text(&self, index: usize) -> &str {
        &self.text[self.sections[index].body.clone()]
    }

    /// `(name, body text)` pairs in document order.
    pub fn section_texts(&self) -> impl Iterator<Item = (&str, &str)> {
        self.sections
            .iter()
            .map(|s| (s.name.as_str(), &self.text[s.body.clone()]))
    }
}

/// Splits a report into sections opened by `<Header>:` lines.
///
/// The header and body spans of all sections tile the text exactly.
pub fn sectionize(study_id: &str, text: &str, headers: &SectionHeaders) -> Result<Report> {
    if study_id.is_empty() {
        return Err(Error::input("study_id must be non-empty"));
    }

    // (name, header span) for every header line found.
    let mut opened: Vec<(String, Range<usize>)> = Vec::new();
    let mut line_start = 0;
    for line in text.split_inclusive('\n') {
        let indent = line.len() - line.trim_start_matches([' ', '\t']).len();
        if let Some(colon) = line.find(':') {
            if colon > indent {
                if let Some(name) = headers.canonical(&line[indent..colon]) {
                    opened.push((name.to_string(), line_start..line_start + colon + 1));
                }
            }
        }
        line_start += line.len();
    }

    let mut sections = Vec::new();
    let first_header = opened.first().map_or(text.len(), |(_, span)| span.start);
    if opened.is_empty() || first_header > 0 {
        sections.push(Section {
            name: PREAMBLE.to_string(),
            header: None,
            body: 0..first_header,
        });
    }
    for (k, (name, span)) in opened.iter().enumerate() {
        let body_end = opened.get(k + 1).map_or(text.len(), |(_, next)| next.start);
        sections.push(Section {
            name: name.clone(),
            header: Some(span.clone()),
            body: span.end..body_end,
        });
    }

    Ok(Report {
        study_id: study_id.to_string(),
        text: text.to_string(),
        sections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(tokens: &[Token]) -> Vec<&str> {
        tokens.iter().map(|t| t.text.as_str()).collect()
    }

    fn kinds(tokens: &[Token]) -> Vec<TokenKind> {
        tokens.iter().map(|t| t.kind).collect()
    }

    const EXAMPLE: &str = "Chest 1 view, 8/21/2011:\n\
        History: 50 years male, eval pleural effusion reaccum. with clamped chest tube.\n\
        Comparison: none.\n\
        Impression: 1. Increased right lower lobe opacity, concerning for infection. 2. No evidence of pneumothorax.";

    #[test]
    fn decimal_stays_whole() {
        let t = tokenize("1.2 cm nodule");
        assert_eq!(texts(&t), ["1.2", "cm", "nodule"]);
        assert_eq!(kinds(&t), [TokenKind::Number, TokenKind::Word, TokenKind::Word]);
    }

    #[test]
    fn hyphenated_compound() {
        let t = tokenize("ground-glass opacities");
        assert_eq!(texts(&t), ["ground-glass", "opacities"]);
        assert_eq!(kinds(&t), [TokenKind::Compound, TokenKind::Word]);
    }

    #[test]
    fn empty_text() {
        assert!(tokenize("").is_empty());
        assert!(tokenize(" \n\t").is_empty());
    }

    #[test]
    fn slashes_split() {
        let t = tokenize("opacity/consolidation 8/21/2011");
        assert_eq!(texts(&t), ["opacity", "/", "consolidation", "8", "/", "21", "/", "2011"]);
        assert_eq!(t[3].kind, TokenKind::Number);
    }

    #[test]
    fn glued_unit_is_measurement() {
        let t = tokenize("a 5mm nodule");
        assert_eq!(t[1].kind, TokenKind::Measurement);
    }

    #[test]
    fn trailing_period_after_number_is_punct() {
        let t = tokenize("1. Increased");
        assert_eq!(texts(&t), ["1", ".", "Increased"]);
        let t = tokenize("measures 1.2.");
        assert_eq!(texts(&t), ["measures", "1.2", "."]);
    }

    #[test]
    fn dangling_hyphen_is_punct() {
        let t = tokenize("well- defined -x");
        assert_eq!(texts(&t), ["well", "-", "defined", "-", "x"]);
    }

    #[test]
    fn non_ascii_offsets_slice_cleanly() {
        let text = "Effusión – 3 cm";
        for t in tokenize(text) {
            assert_eq!(&text[t.start..t.end], t.text);
        }
    }

    fn sentences_of(text: &str) -> Vec<Sentence> {
        split_sentences(&tokenize(text), &Abbreviations::default(), "Impression")
    }

    #[test]
    fn single_sentence() {
        assert_eq!(sentences_of("No evidence of pneumothorax.").len(), 1);
    }

    #[test]
    fn numbered_list() {
        let text = "1. Increased right lower lobe opacity, concerning for infection. 2. No evidence of pneumothorax.";
        let tokens = tokenize(text);
        let s = split_sentences(&tokens, &Abbreviations::default(), "Impression");
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(Sentence::has_list_marker));
        assert_eq!(tokens[s[0].body_start].text, "Increased");
        assert_eq!(tokens[s[1].body_start].text, "No");
        assert_eq!(s[0].token_range.end, s[1].token_range.start);
    }

    #[test]
    fn abbreviation_does_not_split() {
        assert_eq!(sentences_of("eval pleural effusion reaccum. with clamped chest tube.").len(), 1);
        assert_eq!(sentences_of("Seen at 10 a.m. today. Stable.").len(), 2);
        assert_eq!(sentences_of("Compared with Dr. Smith's read. Stable.").len(), 2);
    }

    #[test]
    fn unterminated_tail_is_a_sentence() {
        let s = sentences_of("Stable. No change");
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].token_range, 2..4);
    }

    #[test]
    fn closing_paren_stays_with_sentence() {
        let tokens = tokenize("Opacity (likely atelectasis.) Stable.");
        let s = split_sentences(&tokens, &Abbreviations::default(), "Findings");
        assert_eq!(s.len(), 2);
        assert_eq!(tokens[s[0].token_range.end - 1].text, ")");
    }

    #[test]
    fn example_report_sections() {
        let r = sectionize("s1", EXAMPLE, &SectionHeaders::default()).unwrap();
        let names: Vec<&str> = r.sections.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["preamble", "History", "Comparison", "Impression"]);
        assert_eq!(r.section_text(0), "Chest 1 view, 8/21/2011:\n");
        assert_eq!(r.section_text(2), " none.\n");
    }

    #[test]
    fn no_headers_single_preamble() {
        let r = sectionize("s1", "Lungs are clear.", &SectionHeaders::default()).unwrap();
        assert_eq!(r.sections.len(), 1);
        assert_eq!(r.sections[0].name, PREAMBLE);
        let r = sectionize("s1", "", &SectionHeaders::default()).unwrap();
        assert_eq!(r.sections.len(), 1);
    }

    #[test]
    fn lone_header_is_empty_section() {
        let r = sectionize("s1", "Impression:\n", &SectionHeaders::default()).unwrap();
        assert_eq!(r.sections.len(), 1);
        assert_eq!(r.sections[0].name, "Impression");
        assert_eq!(r.section_text(0), "\n");
    }

    #[test]
    fn headers_match_case_insensitively() {
        let r = sectionize("s1", "FINDINGS: clear\n  impression: normal", &SectionHeaders::default()).unwrap();
        let names: Vec<&str> = r.sections.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["Findings", "Impression"]);
    }

    #[test]
    fn empty_study_id_rejected() {
        assert!(sectionize("", "x", &SectionHeaders::default()).is_err());
    }

    fn reconstruct(r: &Report) -> String {
        r.sections
            .iter()
            .map(|s| {
                let header = s.header.clone().map_or("", |h| &r.text[h]);
                format!("{header}{}", &r.text[s.body.clone()])
            })
            .collect()
    }

    fn report_text() -> impl Strategy<Value = String> {
        let line = prop_oneof![
            "[A-Za-z0-9 ,.;:/()-]{0,30}",
            Just("Impression: 1. No effusion.".to_string()),
            Just("History:".to_string()),
            Just("  findings: 2) Opacity.".to_string()),
        ];
        prop::collection::vec(line, 0..6).prop_map(|ls| ls.join("\n"))
    }

    proptest! {
        #[test]
        fn tokens_cover_all_non_whitespace(text in "[ -~\\n\\tµé–]{0,60}") {
            let tokens = tokenize(&text);
            let mut covered = vec![false; text.len()];
            let mut last_end = 0;
            for t in &tokens {
                prop_assert!(t.start < t.end);
                prop_assert!(t.start >= last_end);
                prop_assert_eq!(&text[t.start..t.end], t.text.as_str());
                covered[t.start..t.end].iter_mut().for_each(|c| *c = true);
                last_end = t.end;
            }
            for (i, c) in text.char_indices() {
                prop_assert_eq!(covered[i], !c.is_whitespace());
            }
            // round trip through the original inter-token whitespace
            let mut rebuilt = String::new();
            let mut pos = 0;
            for t in &tokens {
                rebuilt.push_str(&text[pos..t.start]);
                rebuilt.push_str(&t.text);
                pos = t.end;
            }
            rebuilt.push_str(&text[pos..]);
            prop_assert_eq!(rebuilt, text.clone());
        }

        #[test]
        fn retokenizing_joined_tokens_is_idempotent(text in "[ -~]{0,60}") {
            let first: Vec<String> = tokenize(&text).into_iter().map(|t| t.text).collect();
            let joined = first.join(" ");
            let second: Vec<String> = tokenize(&joined).into_iter().map(|t| t.text).collect();
            prop_assert_eq!(first, second);
        }

        #[test]
        fn sections_reconstruct_text(text in report_text()) {
            let r = sectionize("s", &text, &SectionHeaders::default()).unwrap();
            prop_assert_eq!(reconstruct(&r), text);
        }

        #[test]
        fn sentences_partition_tokens(text in "[a-z0-9 .!?,)]{0,80}") {
            let tokens = tokenize(&text);
            let s = split_sentences(&tokens, &Abbreviations::default(), "x");
            let mut next = 0;
            for sentence in &s {
                prop_assert_eq!(sentence.token_range.start, next);
                prop_assert!(sentence.token_range.end > sentence.token_range.start);
                prop_assert!(sentence.body_start <= sentence.token_range.end);
                next = sentence.token_range.end;
            }
            prop_assert_eq!(next, tokens.len());
        }
    }
}
