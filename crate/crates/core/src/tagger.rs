//! Entity recognition: lexicon matching, optionally refined by Viterbi decoding.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decode::{viterbi_decode, ScoreTable, Tag, NUM_TAGS};
use crate::error::{Error, Result};
use crate::tokenizer::{tokenize, Sentence, Token};

const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityType {
    #[serde(rename = "ANAT")]
    Anat,
    #[serde(rename = "OBS")]
    Obs,
    #[serde(rename = "MOD")]
    Mod,
    #[serde(rename = "NEG")]
    Neg,
}

impl EntityType {
    pub fn as_str(self) -> &'static str {
        self.tag().as_str()
    }

    pub fn tag(self) -> Tag {
        match self {
            EntityType::Anat => Tag::Anat,
            EntityType::Obs => Tag::Obs,
            EntityType::Mod => Tag::Mod,
            EntityType::Neg => Tag::Neg,
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ANAT" => Ok(EntityType::Anat),
            "OBS" => Ok(EntityType::Obs),
            "MOD" => Ok(EntityType::Mod),
            "NEG" => Ok(EntityType::Neg),
            other => Err(Error::input(format!("unknown entity type {other:?}"))),
        }
    }
}

/// What a lexicon phrase marks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhraseClass {
    Entity(EntityType),
    /// Uncertainty connector between two observations ("concerning for").
    Hedge,
}

/// Optional third column of a lexicon line.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PhraseTag {
    /// On OBS: the condition this phrase reports, e.g. `PNEUMOTHORAX`.
    Condition(String),
    /// On MOD: attaches to anatomy before observations.
    Locative,
    /// On MOD: expresses uncertainty about its target.
    Hedge,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    pub class: PhraseClass,
    pub tag: Option<PhraseTag>,
}

/// Phrase table keyed by case-folded token texts.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: HashMap<Vec<String>, LexiconEntry>,
    longest: usize,
    source: String,
}

fn fold_phrase(phrase: &str) -> Vec<String> {
    tokenize(phrase).into_iter().map(|t| t.text.to_lowercase()).collect()
}

impl Lexicon {
    /// Parses `phrase<TAB>TYPE[<TAB>TAG]` lines; `#` starts a comment line.
    pub fn parse(source: &str, origin: &str) -> Result<Self> {
        let mut lexicon = Lexicon {
            source: origin.to_string(),
            ..Lexicon::default()
        };
        for (n, raw) in source.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::parse(origin, n + 1, msg);
            let cols: Vec<&str> = line.split('\t').collect();
            if !(2..=3).contains(&cols.len()) {
                return Err(bad(format!("expected phrase<TAB>TYPE[<TAB>TAG], got {line:?}")));
            }
            let phrase = fold_phrase(cols[0]);
            if phrase.is_empty() {
                return Err(bad("empty phrase".into()));
            }
            let class = match cols[1].trim() {
                "HEDGE" => PhraseClass::Hedge,
                other => PhraseClass::Entity(other.parse().map_err(|e: Error| bad(e.to_string()))?),
            };
            let tag = match (class, cols.get(2).map(|t| t.trim())) {
                (_, None) => None,
                (PhraseClass::Entity(EntityType::Obs), Some(cond)) if !cond.is_empty() => {
                    Some(PhraseTag::Condition(cond.to_string()))
                }
                (PhraseClass::Entity(EntityType::Mod), Some("LOCATIVE")) => Some(PhraseTag::Locative),
                (PhraseClass::Entity(EntityType::Mod), Some("HEDGE")) => Some(PhraseTag::Hedge),
                (_, Some(other)) => {
                    return Err(bad(format!("tag {other:?} not allowed on {}", cols[1].trim())))
                }
            };
            lexicon.insert(phrase, LexiconEntry { class, tag });
        }
        Ok(lexicon)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Lexicon::parse(&text, &path.display().to_string())
    }

    fn insert(&mut self, phrase: Vec<String>, entry: LexiconEntry) {
        self.longest = self.longest.max(phrase.len());
        self.entries.insert(phrase, entry);
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, phrase: &str) -> Option<&LexiconEntry> {
        self.entries.get(&fold_phrase(phrase))
    }

    /// Adds or replaces a hedge connector phrase.
    pub fn add_hedge(&mut self, phrase: &str) {
        let folded = fold_phrase(phrase);
        if !folded.is_empty() {
            self.insert(
                folded,
                LexiconEntry {
                    class: PhraseClass::Hedge,
                    tag: None,
                },
            );
        }
    }

    /// True for hedge connectors and hedge-tagged modifiers.
    pub fn is_hedge(&self, phrase: &str) -> bool {
        self.get(phrase).is_some_and(|e| {
            e.class == PhraseClass::Hedge || e.tag == Some(PhraseTag::Hedge)
        })
    }

    pub fn is_locative(&self, phrase: &str) -> bool {
        self.get(phrase).is_some_and(|e| e.tag == Some(PhraseTag::Locative))
    }

    /// Folded hedge connectors and hedge-tagged modifiers, sorted.
    pub fn hedge_phrases(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .entries
            .iter()
            .filter(|(_, e)| e.class == PhraseClass::Hedge || e.tag == Some(PhraseTag::Hedge))
            .map(|(k, _)| k.join(" "))
            .collect();
        out.sort();
        out
    }

    /// Folded phrases tagged with `condition`, sorted.
    pub fn condition_phrases(&self, condition: &str) -> Vec<String> {
        let mut out: Vec<String> = self
            .entries
            .iter()
            .filter(|(_, e)| e.tag == Some(PhraseTag::Condition(condition.to_string())))
            .map(|(k, _)| k.join(" "))
            .collect();
        out.sort();
        out
    }
}

/// The lexicon shipped with the crate.
pub fn default_lexicon() -> Lexicon {
    Lexicon::parse(DEFAULT_LEXICON, "<built-in lexicon.tsv>").expect("built-in lexicon parses")
}

/// One lexicon hit; `tokens` indexes the slice passed to [`match_lexicon`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconMatch {
    pub tokens: Range<usize>,
    pub class: PhraseClass,
}

/// Greedy longest match, left to right, case-insensitive. Matches never overlap.
pub fn match_lexicon(tokens: &[Token], lexicon: &Lexicon) -> Vec<LexiconMatch> {
    let folded: Vec<String> = tokens.iter().map(|t| t.text.to_lowercase()).collect();
    let mut matches = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let max_len = lexicon.longest.min(tokens.len() - i);
        let hit = (1..=max_len)
            .rev()
            .find_map(|len| lexicon.entries.get(&folded[i..i + len]).map(|e| (len, e)));
        match hit {
            Some((len, entry)) => {
                matches.push(LexiconMatch {
                    tokens: i..i + len,
                    class: entry.class,
                });
                i += len;
            }
            None => i += 1,
        }
    }
    matches
}

/// A typed span of tokens; `token_range` indexes the report's token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: usize,
    pub token_range: Range<usize>,
    pub text: String,
    pub etype: EntityType,
    pub sentence_index: usize,
    pub section: String,
}

/// Decode-time refinement of lexicon matches.
///
/// Matched tokens get `boost` added to their lexicon tag's emission over a
/// zero baseline; `transitions` score adjacent tag pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub boost: f64,
    pub transitions: [[f64; NUM_TAGS]; NUM_TAGS],
}

pub const DEFAULT_BOOST: f64 = 5.0;

impl Default for Decoder {
    fn default() -> Self {
        Decoder {
            boost: DEFAULT_BOOST,
            transitions: [[0.0; NUM_TAGS]; NUM_TAGS],
        }
    }
}

impl Decoder {
    pub fn score_table(&self, len: usize, matches: &[LexiconMatch]) -> ScoreTable {
        let mut table = ScoreTable::zeros(len);
        table.transitions = self.transitions;
        for m in matches {
            if let PhraseClass::Entity(etype) = m.class {
                for row in &mut table.emissions[m.tokens.clone()] {
                    row[etype.tag().index()] += self.boost;
                }
            }
        }
        table
    }
}

/// Entities of one sentence plus the hedge connectors found between them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaggedSentence {
    pub entities: Vec<Entity>,
    /// Connector spans (report token indices) available to the hedge relation rule.
    pub hedges: Vec<Range<usize>>,
}

/// Tags the body of `sentence`, numbering entities from `first_id`.
///
/// Without a decoder, lexicon matches become entities directly. With one,
/// the decoded tag sequence is cut into maximal same-tag runs and each run
/// is intersected with the lexicon spans of that tag.
///
/// A hedge phrase with an observation on both sides is a connector and is
/// returned in `hedges`. Otherwise it has nothing to link and is kept as a
/// hedge modifier entity, so "cannot exclude pneumothorax" still marks
/// uncertainty.
pub fn tag_entities(
    tokens: &[Token],
    sentence: &Sentence,
    sentence_index: usize,
    lexicon: &Lexicon,
    decoder: Option<&Decoder>,
    first_id: usize,
) -> Result<TaggedSentence> {
    let body = sentence.body();
    let offset = body.start;
    let slice = &tokens[body.clone()];
    let matches = match_lexicon(slice, lexicon);

    let mut spans: Vec<(Range<usize>, EntityType)> = Vec::new();
    let entity_matches = matches.iter().filter_map(|m| match m.class {
        PhraseClass::Entity(t) => Some((m.tokens.clone(), t)),
        PhraseClass::Hedge => None,
    });
    match decoder {
        None => spans.extend(entity_matches),
        Some(_) if slice.is_empty() => {}
        Some(decoder) => {
            let decoded = viterbi_decode(&decoder.score_table(slice.len(), &matches))?;
            for (span, etype) in entity_matches {
                for run in tag_runs(&decoded.tags) {
                    if decoded.tags[run.start] != etype.tag() {
                        continue;
                    }
                    let lo = run.start.max(span.start);
                    let hi = run.end.min(span.end);
                    if lo < hi {
                        spans.push((lo..hi, etype));
                    }
                }
            }
        }
    }

    let mut hedges = Vec::new();
    for m in matches.iter().filter(|m| m.class == PhraseClass::Hedge) {
        let obs_before = spans.iter().any(|(s, t)| *t == EntityType::Obs && s.end <= m.tokens.start);
        let obs_after = spans.iter().any(|(s, t)| *t == EntityType::Obs && s.start >= m.tokens.end);
        if obs_before && obs_after {
            hedges.push(m.tokens.start + offset..m.tokens.end + offset);
        } else {
            spans.push((m.tokens.clone(), EntityType::Mod));
        }
    }
    spans.sort_by_key(|(s, _)| s.start);

    let entities = spans
        .into_iter()
        .enumerate()
        .map(|(k, (span, etype))| {
            let range = span.start + offset..span.end + offset;
            let text = tokens[range.clone()]
                .iter()
                .map(|t| t.text.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            Entity {
                id: first_id + k,
                token_range: range,
                text,
                etype,
                sentence_index,
                section: sentence.section.clone(),
            }
        })
        .collect();
    Ok(TaggedSentence { entities, hedges })
}

fn tag_runs(tags: &[Tag]) -> Vec<Range<usize>> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=tags.len() {
        if i == tags.len() || tags[i] != tags[start] {
            runs.push(start..i);
            start = i;
        }
    }
    runs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{split_sentences, Abbreviations};

    fn sentence(text: &str) -> (Vec<Token>, Sentence) {
        let tokens = tokenize(text);
        let s = Sentence {
            token_range: 0..tokens.len(),
            body_start: 0,
            section: "Impression".into(),
        };
        (tokens, s)
    }

    fn tagged(text: &str, decoder: Option<&Decoder>) -> Vec<(String, EntityType)> {
        let (tokens, s) = sentence(text);
        tag_entities(&tokens, &s, 0, &default_lexicon(), decoder, 0)
            .unwrap()
            .entities
            .into_iter()
            .map(|e| (e.text, e.etype))
            .collect()
    }

    fn pairs(items: &[(&str, EntityType)]) -> Vec<(String, EntityType)> {
        items.iter().map(|(t, e)| (t.to_string(), *e)).collect()
    }

    #[test]
    fn default_lexicon_loads() {
        let lex = default_lexicon();
        assert!(lex.len() >= 80);
        assert!(lex.is_hedge("concerning for"));
        assert!(lex.is_hedge("Likely"));
        assert!(lex.is_locative("right"));
        assert_eq!(lex.condition_phrases("PNEUMONIA"), ["infection", "infectious process", "pneumonia"]);
    }

    #[test]
    fn right_lower_lobe_opacity() {
        use EntityType::*;
        assert_eq!(
            tagged("right lower lobe opacity", None),
            pairs(&[("right", Mod), ("lower", Mod), ("lobe", Anat), ("opacity", Obs)])
        );
    }

    #[test]
    fn no_hits() {
        assert!(match_lexicon(&tokenize("the the the"), &default_lexicon()).is_empty());
    }

    #[test]
    fn multi_token_phrase_is_one_entity() {
        let m = match_lexicon(&tokenize("Pleural Effusion"), &default_lexicon());
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].tokens, 0..2);
        assert_eq!(m[0].class, PhraseClass::Entity(EntityType::Obs));
    }

    #[test]
    fn negation_phrase() {
        use EntityType::*;
        assert_eq!(
            tagged("No evidence of pneumothorax", None),
            pairs(&[("No evidence", Neg), ("pneumothorax", Obs)])
        );
    }

    #[test]
    fn modifier_phrase() {
        use EntityType::*;
        assert_eq!(tagged("increased opacity", None), pairs(&[("increased", Mod), ("opacity", Obs)]));
    }

    #[test]
    fn empty_sentence() {
        assert!(tagged("", None).is_empty());
        assert!(tagged("", Some(&Decoder::default())).is_empty());
    }

    #[test]
    fn hedge_between_observations_is_a_connector() {
        let (tokens, s) = sentence("opacity, concerning for infection");
        let t = tag_entities(&tokens, &s, 0, &default_lexicon(), None, 0).unwrap();
        assert_eq!(t.entities.len(), 2);
        assert_eq!(t.hedges, vec![2..4]);
    }

    #[test]
    fn hedge_without_source_becomes_modifier() {
        use EntityType::*;
        assert_eq!(
            tagged("Cannot exclude pneumothorax", None),
            pairs(&[("Cannot exclude", Mod), ("pneumothorax", Obs)])
        );
    }

    #[test]
    fn zero_transition_decoder_reproduces_lexicon_entities() {
        for text in [
            "Increased right lower lobe opacity, concerning for infection.",
            "No evidence of pneumothorax.",
            "Small left pleural effusion without focal consolidation.",
        ] {
            assert_eq!(tagged(text, Some(&Decoder::default())), tagged(text, None), "{text}");
        }
    }

    #[test]
    fn transitions_can_override_weak_evidence() {
        // A weak boost cannot pay for the penalised MOD -> OBS step. The
        // decoder keeps the OBS reading and drops the MOD one.
        let mut decoder = Decoder {
            boost: 0.5,
            ..Decoder::default()
        };
        decoder.transitions[Tag::Mod.index()][Tag::Obs.index()] = -10.0;
        let got = tagged("increased opacity", Some(&decoder));
        assert_eq!(got, pairs(&[("opacity", EntityType::Obs)]));
    }

    #[test]
    fn entities_are_ordered_and_disjoint() {
        let text = "1. Increased right lower lobe opacity, concerning for infection. 2. No evidence of pneumothorax.";
        let tokens = tokenize(text);
        let lex = default_lexicon();
        for (k, s) in split_sentences(&tokens, &Abbreviations::default(), "Impression").iter().enumerate() {
            let t = tag_entities(&tokens, s, k, &lex, None, 0).unwrap();
            for w in t.entities.windows(2) {
                assert!(w[0].token_range.end <= w[1].token_range.start);
            }
            for e in &t.entities {
                assert!(e.token_range.start >= s.body_start && e.token_range.end <= s.token_range.end);
            }
        }
    }

    #[test]
    fn malformed_lexicon_lines_name_the_line() {
        let err = Lexicon::parse("lung\tANAT\nopacity\tFOO\n", "lex.tsv").unwrap_err();
        assert!(err.to_string().starts_with("lex.tsv:2:"), "{err}");
        assert!(Lexicon::parse("lung\n", "x").is_err());
        assert!(Lexicon::parse("lung\tANAT\tLOCATIVE\n", "x").is_err());
    }
}
