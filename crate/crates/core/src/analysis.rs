//! Report-to-report similarity and corpus term frequencies.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format;
use crate::pipeline::ParsedReport;
use crate::tagger::EntityType;

const DEFAULT_VERBS: &str = include_str!("../data/verbs.txt");

/// Closed list of verb forms, matched case-insensitively against single tokens.
#[derive(Debug, Clone)]
pub struct VerbList(HashSet<String>);

impl VerbList {
    /// One verb per line; blank lines and `#` comments are skipped.
    pub fn parse(source: &str) -> Self {
        VerbList(
            source
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(VerbList::parse(&std::fs::read_to_string(path)?))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(&word.to_lowercase())
    }
}

impl Default for VerbList {
    fn default() -> Self {
        VerbList::parse(DEFAULT_VERBS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Facet {
    NounPhrases,
    Verbs,
    Entities,
}

impl Facet {
    pub const ALL: [Facet; 3] = [Facet::NounPhrases, Facet::Verbs, Facet::Entities];

    pub fn as_str(self) -> &'static str {
        match self {
            Facet::NounPhrases => "noun_phrases",
            Facet::Verbs => "verbs",
            Facet::Entities => "entities",
        }
    }
}

impl fmt::Display for Facet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Facet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Facet::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::input(format!("unknown facet {s:?}")))
    }
}

/// Case-folded term sets describing one report.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureSets {
    pub noun_phrases: BTreeSet<String>,
    pub verbs: BTreeSet<String>,
    pub entities: BTreeSet<String>,
}

impl FeatureSets {
    pub fn facet(&self, facet: Facet) -> &BTreeSet<String> {
        match facet {
            Facet::NounPhrases => &self.noun_phrases,
            Facet::Verbs => &self.verbs,
            Facet::Entities => &self.entities,
        }
    }
}

/// Noun phrases are maximal runs of token-adjacent modifiers ending in an
/// anatomy or observation entity, e.g. "increased right lower lobe".
pub fn feature_sets(parsed: &ParsedReport, verbs: &VerbList) -> FeatureSets {
    let entities = &parsed.graph.entities;
    let mut sets = FeatureSets {
        entities: entities.iter().map(|e| e.text.to_lowercase()).collect(),
        verbs: verb_tokens(parsed, verbs).map(str::to_lowercase).collect(),
        ..FeatureSets::default()
    };

    let mut run: Vec<&str> = Vec::new();
    for (i, e) in entities.iter().enumerate() {
        let adjacent = i > 0 && {
            let prev = &entities[i - 1];
            prev.sentence_index == e.sentence_index && prev.token_range.end == e.token_range.start
        };
        if !adjacent {
            run.clear();
        }
        match e.etype {
            EntityType::Mod => run.push(&e.text),
            EntityType::Anat | EntityType::Obs => {
                run.push(&e.text);
                sets.noun_phrases.insert(run.join(" ").to_lowercase());
                run.clear();
            }
            EntityType::Neg => run.clear(),
        }
    }
    sets
}

fn verb_tokens<'a>(parsed: &'a ParsedReport, verbs: &'a VerbList) -> impl Iterator<Item = &'a str> {
    parsed
        .tokens
        .iter()
        .map(|t| t.text.as_str())
        .filter(|w| verbs.contains(w))
}

/// `|A ∩ B| / max(|A|, |B|)`, or the classical Jaccard index `|A ∩ B| / |A ∪ B|`
/// when `jaccard` is set. Two empty sets score 1.0 under both.
pub fn similarity(a: &BTreeSet<String>, b: &BTreeSet<String>, jaccard: bool) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let shared = a.intersection(b).count();
    let denominator = if jaccard {
        a.len() + b.len() - shared
    } else {
        a.len().max(b.len())
    };
    shared as f64 / denominator as f64
}

#[derive(Debug, Clone)]
pub struct SimilarityRow {
    pub study_a: String,
    pub study_b: String,
    pub facet: Facet,
    pub score: f64,
}

/// Scores every unordered pair of reports, in input order, on each requested facet.
pub fn similarity_matrix(
    ids: &[&str],
    features: &[FeatureSets],
    facets: &[Facet],
    jaccard: bool,
) -> Vec<SimilarityRow> {
    let mut rows = Vec::new();
    for i in 0..features.len() {
        for j in i + 1..features.len() {
            for &facet in facets {
                rows.push(SimilarityRow {
                    study_a: ids[i].to_string(),
                    study_b: ids[j].to_string(),
                    facet,
                    score: similarity(features[i].facet(facet), features[j].facet(facet), jaccard),
                });
            }
        }
    }
    rows
}

pub fn similarity_to_csv(rows: &[SimilarityRow]) -> String {
    let mut w = csv_writer();
    w.write_record(["study_a", "study_b", "facet", "score"]).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.study_a.as_str(),
            r.study_b.as_str(),
            r.facet.as_str(),
            &format::real(r.score),
        ])
        .expect("in-memory write");
    }
    finish(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrequencyKind {
    Verb,
    Entity,
}

impl FromStr for FrequencyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "verb" | "verbs" => Ok(FrequencyKind::Verb),
            "entity" | "entities" => Ok(FrequencyKind::Entity),
            _ => Err(Error::input(format!("unknown frequency kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    pub kind: FrequencyKind,
    /// Sorted by count descending, then term ascending.
    pub rows: Vec<(String, usize)>,
}

impl FrequencyTable {
    pub fn total(&self) -> usize {
        self.rows.iter().map(|(_, n)| n).sum()
    }
}

/// Counts verb tokens or entity mentions, case-folded, over the corpus.
pub fn frequency_table(reports: &[ParsedReport], kind: FrequencyKind, verbs: &VerbList) -> FrequencyTable {
    let counts = reports
        .par_iter()
        .map(|parsed| {
            let mut counts: HashMap<String, usize> = HashMap::new();
            let terms: Box<dyn Iterator<Item = String>> = match kind {
                FrequencyKind::Verb => Box::new(verb_tokens(parsed, verbs).map(str::to_lowercase)),
                FrequencyKind::Entity => Box::new(parsed.graph.entities.iter().map(|e| e.text.to_lowercase())),
            };
            for term in terms {
                *counts.entry(term).or_default() += 1;
            }
            counts
        })
        .reduce(HashMap::new, |mut a, b| {
            for (term, n) in b {
                *a.entry(term).or_default() += n;
            }
            a
        });

    let mut rows: Vec<(String, usize)> = counts.into_iter().collect();
    rows.sort_by(|(ta, na), (tb, nb)| nb.cmp(na).then_with(|| ta.cmp(tb)));
    FrequencyTable { kind, rows }
}

pub fn frequency_to_csv(table: &FrequencyTable) -> String {
    let mut w = csv_writer();
    w.write_record(["term", "count"]).expect("in-memory write");
    for (term, n) in &table.rows {
        w.write_record([term.as_str(), &n.to_string()]).expect("in-memory write");
    }
    finish(w)
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 input gives UTF-8 output")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Pipeline;
    use proptest::prelude::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn parse(text: &str) -> ParsedReport {
        Pipeline::default().parse("s", text).unwrap()
    }

    #[test]
    fn worked_similarity() {
        assert_eq!(similarity(&set(&["a", "b", "c"]), &set(&["b", "c", "d", "e"]), false), 0.5);
        assert_eq!(similarity(&set(&["a", "b", "c"]), &set(&["b", "c", "d", "e"]), true), 2.0 / 5.0);
        assert_eq!(similarity(&set(&["a"]), &set(&["b"]), false), 0.0);
        assert_eq!(similarity(&set(&[]), &set(&[]), false), 1.0);
        assert_eq!(similarity(&set(&["x"]), &set(&[]), false), 0.0);
    }

    #[test]
    fn verbs_found() {
        let f = feature_sets(&parse("The left lung shows opacity"), &VerbList::default());
        assert!(f.verbs.contains("shows"));
    }

    #[test]
    fn empty_report_has_empty_sets() {
        assert_eq!(feature_sets(&parse(""), &VerbList::default()), FeatureSets::default());
    }

    #[test]
    fn example_report_entities_and_phrases() {
        let f = feature_sets(&parse(crate::labeler::tests::EXAMPLE), &VerbList::default());
        for e in ["opacity", "infection", "pneumothorax"] {
            assert!(f.entities.contains(e), "{e} missing from {:?}", f.entities);
        }
        assert!(f.noun_phrases.contains("increased right lower lobe"), "{:?}", f.noun_phrases);
        assert!(f.noun_phrases.contains("opacity"));
    }

    #[test]
    fn frequency_of_repeated_report() {
        let reports: Vec<_> = (0..3).map(|_| parse("Findings: Patchy opacity.")).collect();
        let t = frequency_table(&reports, FrequencyKind::Entity, &VerbList::default());
        assert_eq!(t.rows[0], ("opacity".to_string(), 3));
        assert!(frequency_table(&[], FrequencyKind::Verb, &VerbList::default()).rows.is_empty());
    }

    #[test]
    fn frequency_ordering_and_csv() {
        let reports = vec![parse("Effusion is small. Opacity is new. Lungs are clear.")];
        let t = frequency_table(&reports, FrequencyKind::Verb, &VerbList::default());
        assert_eq!(t.rows, [("is".to_string(), 2), ("are".to_string(), 1)]);
        assert_eq!(frequency_to_csv(&t), "term,count\nis,2\nare,1\n");
    }

    #[test]
    fn similarity_csv_rows() {
        let a = feature_sets(&parse("Opacity."), &VerbList::default());
        let b = feature_sets(&parse("Opacity. Effusion."), &VerbList::default());
        let rows = similarity_matrix(&["a", "b"], &[a, b], &[Facet::Entities], false);
        assert_eq!(similarity_to_csv(&rows), "study_a,study_b,facet,score\na,b,entities,0.5\n");
    }

    fn small_set() -> impl Strategy<Value = BTreeSet<String>> {
        prop::collection::btree_set("[a-h]", 0..8)
    }

    proptest! {
        #[test]
        fn similarity_properties(a in small_set(), b in small_set(), jaccard in any::<bool>()) {
            let s = similarity(&a, &b, jaccard);
            prop_assert_eq!(s, similarity(&b, &a, jaccard));
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(similarity(&a, &a, jaccard), 1.0);
        }

        #[test]
        fn shared_term_does_not_hurt((a, b) in (0usize..6).prop_flat_map(|n| {
            (prop::collection::btree_set("[a-h]", n), prop::collection::btree_set("[a-h]", n))
        })) {
            let before = similarity(&a, &b, false);
            let mut a2 = a.clone();
            let mut b2 = b.clone();
            a2.insert("zz".into());
            b2.insert("zz".into());
            prop_assert!(similarity(&a2, &b2, false) >= before);
        }

        #[test]
        fn counts_are_conserved(words in prop::collection::vec(prop::sample::select(vec!["is", "are", "shows", "lung", "opacity"]), 0..30)) {
            let text = words.join(" ");
            let parsed = parse(&text);
            let verbs = VerbList::default();
            let t = frequency_table(std::slice::from_ref(&parsed), FrequencyKind::Verb, &verbs);
            prop_assert_eq!(t.total(), words.iter().filter(|w| verbs.contains(w)).count());
            let e = frequency_table(std::slice::from_ref(&parsed), FrequencyKind::Entity, &verbs);
            prop_assert_eq!(e.total(), parsed.graph.entities.len());
        }
    }
}
