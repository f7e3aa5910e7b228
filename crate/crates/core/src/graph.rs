//! Typed relations between entities and the per-report graph.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tagger::{Entity, EntityType, Lexicon};
use crate::tokenizer::{Token, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RelationType {
    LocatedAt,
    SuggestiveOf,
    Modify,
    Negation,
}

impl RelationType {
    pub fn as_str(self) -> &'static str {
        match self {
            RelationType::LocatedAt => "LOCATED_AT",
            RelationType::SuggestiveOf => "SUGGESTIVE_OF",
            RelationType::Modify => "MODIFY",
            RelationType::Negation => "NEGATION",
        }
    }

    /// Whether `src -> dst` has the entity types this relation allows.
    pub fn admits(self, src: EntityType, dst: EntityType) -> bool {
        use EntityType::*;
        match self {
            RelationType::Modify => src == Mod && matches!(dst, Obs | Anat),
            RelationType::LocatedAt => src == Obs && dst == Anat,
            RelationType::SuggestiveOf => src == Obs && dst == Obs,
            RelationType::Negation => src == Neg && dst == Obs,
        }
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub src: usize,
    pub dst: usize,
    #[serde(rename = "type")]
    pub rtype: RelationType,
}

/// Clause index of every token: commas, semicolons, colons and hedge
/// connectors start a new clause.
fn clause_ids(tokens: &[Token], hedges: &[Range<usize>]) -> HashMap<usize, usize> {
    let mut ids = HashMap::new();
    let mut clause = 0;
    for (i, t) in tokens.iter().enumerate() {
        let delimiter = t.kind == TokenKind::Punct && matches!(t.text.as_str(), "," | ";" | ":");
        if delimiter || hedges.iter().any(|h| h.start == i) {
            clause += 1;
        }
        ids.insert(i, clause);
    }
    ids
}

/// Applies the relation rules to the entities of one sentence.
///
/// In order:
/// 1. MODIFY: each MOD attaches to the nearest following OBS, falling back
///    to the nearest following ANAT. Locative modifiers ("right", "lower")
///    try ANAT first and fall back to OBS.
/// 2. LOCATED_AT: each OBS attaches to the nearest ANAT in its clause,
///    counting tokens between the spans; the preceding one wins a tie.
/// 3. SUGGESTIVE_OF: for each hedge connector, the last OBS before it
///    points to the first OBS after it.
/// 4. NEGATION: each NEG attaches to the nearest following OBS.
///
/// `tokens` is the report's token sequence and `hedges` the connector
/// spans produced by the tagger for this sentence.
pub fn extract_relations(
    entities: &[Entity],
    hedges: &[Range<usize>],
    tokens: &[Token],
    lexicon: &Lexicon,
) -> Vec<Relation> {
    let mut ordered: Vec<&Entity> = entities.iter().collect();
    ordered.sort_by_key(|e| (e.token_range.start, e.id));
    let clauses = clause_ids(tokens, hedges);
    let clause_of = |e: &Entity| clauses.get(&e.token_range.start).copied();

    let following = |from: &Entity, etype: EntityType| {
        ordered
            .iter()
            .find(|e| e.etype == etype && e.token_range.start >= from.token_range.end)
            .copied()
    };

    let mut out = Vec::new();

    for m in ordered.iter().filter(|e| e.etype == EntityType::Mod) {
        let preference = if lexicon.is_locative(&m.text) {
            [EntityType::Anat, EntityType::Obs]
        } else {
            [EntityType::Obs, EntityType::Anat]
        };
        if let Some(target) = preference.iter().find_map(|&t| following(m, t)) {
            out.push(Relation {
                src: m.id,
                dst: target.id,
                rtype: RelationType::Modify,
            });
        }
    }

    for obs in ordered.iter().filter(|e| e.etype == EntityType::Obs) {
        let nearest = ordered
            .iter()
            .filter(|a| a.etype == EntityType::Anat && clause_of(a) == clause_of(obs))
            .map(|a| {
                let before = a.token_range.end <= obs.token_range.start;
                let gap = if before {
                    obs.token_range.start - a.token_range.end
                } else {
                    a.token_range.start.saturating_sub(obs.token_range.end)
                };
                // preceding anatomy sorts first on equal distance
                ((gap, !before), a.id)
            })
            .min();
        if let Some((_, anat)) = nearest {
            out.push(Relation {
                src: obs.id,
                dst: anat,
                rtype: RelationType::LocatedAt,
            });
        }
    }

    for hedge in hedges {
        let src = ordered
            .iter()
            .rev()
            .find(|e| e.etype == EntityType::Obs && e.token_range.end <= hedge.start);
        let dst = ordered
            .iter()
            .find(|e| e.etype == EntityType::Obs && e.token_range.start >= hedge.end);
        if let (Some(src), Some(dst)) = (src, dst) {
            out.push(Relation {
                src: src.id,
                dst: dst.id,
                rtype: RelationType::SuggestiveOf,
            });
        }
    }

    for neg in ordered.iter().filter(|e| e.etype == EntityType::Neg) {
        if let Some(obs) = following(neg, EntityType::Obs) {
            out.push(Relation {
                src: neg.id,
                dst: obs.id,
                rtype: RelationType::Negation,
            });
        }
    }

    out
}

/// Entities and relations of one report: `G = (V, E)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportGraph {
    pub study_id: String,
    /// Ordered by token position.
    pub entities: Vec<Entity>,
    /// Ordered by `(src, dst, type)`, without duplicates.
    pub relations: Vec<Relation>,
}

impl ReportGraph {
    pub fn empty(study_id: &str) -> Self {
        ReportGraph {
            study_id: study_id.to_string(),
            entities: Vec::new(),
            relations: Vec::new(),
        }
    }

    pub fn entity(&self, id: usize) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn incoming(&self, id: usize) -> impl Iterator<Item = &Relation> {
        self.relations.iter().filter(move |r| r.dst == id)
    }

    pub fn outgoing(&self, id: usize) -> impl Iterator<Item = &Relation> {
        self.relations.iter().filter(move |r| r.src == id)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for e in &self.entities {
            if !ids.insert(e.id) {
                return Err(Error::Integrity(format!("duplicate entity id {}", e.id)));
            }
            if e.token_range.is_empty() {
                return Err(Error::Integrity(format!("entity {} has an empty token range", e.id)));
            }
        }
        let by_id: HashMap<usize, &Entity> = self.entities.iter().map(|e| (e.id, e)).collect();
        for r in &self.relations {
            let (Some(src), Some(dst)) = (by_id.get(&r.src), by_id.get(&r.dst)) else {
                return Err(Error::Integrity(format!(
                    "relation {} -> {} ({}) has a dangling endpoint",
                    r.src, r.dst, r.rtype
                )));
            };
            if r.src == r.dst {
                return Err(Error::Integrity(format!("self-loop on entity {}", r.src)));
            }
            if src.sentence_index != dst.sentence_index {
                return Err(Error::Integrity(format!(
                    "relation {} -> {} crosses a sentence boundary",
                    r.src, r.dst
                )));
            }
            if !r.rtype.admits(src.etype, dst.etype) {
                return Err(Error::Integrity(format!(
                    "{} cannot link {} to {}",
                    r.rtype, src.etype, dst.etype
                )));
            }
        }
        Ok(())
    }
}

/// Assembles a report graph from per-sentence entities and relations.
///
/// Relations emitted more than once are stored once.
pub fn build_graph<I>(study_id: &str, sentences: I) -> Result<ReportGraph>
where
    I: IntoIterator<Item = (Vec<Entity>, Vec<Relation>)>,
{
    let mut entities = Vec::new();
    let mut relations = BTreeSet::new();
    for (es, rs) in sentences {
        entities.extend(es);
        relations.extend(rs);
    }
    entities.sort_by_key(|e: &Entity| (e.token_range.start, e.id));
    let graph = ReportGraph {
        study_id: study_id.to_string(),
        entities,
        relations: relations.into_iter().collect(),
    };
    graph.validate()?;
    Ok(graph)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityRecord {
    id: usize,
    text: String,
    #[serde(rename = "type")]
    etype: EntityType,
    section: String,
    sentence: usize,
    start_token: usize,
    end_token: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    study_id: String,
    entities: Vec<EntityRecord>,
    relations: Vec<Relation>,
}

/// Compact JSON with fixed key order, entities by token position and
/// relations by `(src, dst, type)`.
pub fn graph_to_json(graph: &ReportGraph) -> String {
    let mut entities: Vec<&Entity> = graph.entities.iter().collect();
    entities.sort_by_key(|e| (e.token_range.start, e.id));
    let mut relations = graph.relations.clone();
    relations.sort();
    relations.dedup();
    let record = GraphRecord {
        study_id: graph.study_id.clone(),
        entities: entities
            .into_iter()
            .map(|e| EntityRecord {
                id: e.id,
                text: e.text.clone(),
                etype: e.etype,
                section: e.section.clone(),
                sentence: e.sentence_index,
                start_token: e.token_range.start,
                end_token: e.token_range.end,
            })
            .collect(),
        relations,
    };
    serde_json::to_string(&record).expect("graph records always serialize")
}

/// Parses and validates a graph written by [`graph_to_json`].
pub fn graph_from_json(json: &str) -> Result<ReportGraph> {
    let record: GraphRecord = serde_json::from_str(json)?;
    let entities = record
        .entities
        .into_iter()
        .map(|e| Entity {
            id: e.id,
            token_range: e.start_token..e.end_token,
            text: e.text,
            etype: e.etype,
            sentence_index: e.sentence,
            section: e.section,
        })
        .collect();
    build_graph(&record.study_id, [(entities, record.relations)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagger::{default_lexicon, tag_entities};
    use crate::tokenizer::{split_sentences, tokenize, Abbreviations};
    use proptest::prelude::*;

    /// (source text, target text, type) triples for a single sentence.
    fn relations_of(text: &str) -> Vec<(String, String, RelationType)> {
        let tokens = tokenize(text);
        let lexicon = default_lexicon();
        let sentences = split_sentences(&tokens, &Abbreviations::default(), "Impression");
        assert_eq!(sentences.len(), 1);
        let tagged = tag_entities(&tokens, &sentences[0], 0, &lexicon, None, 0).unwrap();
        let text_of = |id: usize| tagged.entities.iter().find(|e| e.id == id).unwrap().text.clone();
        let mut out: Vec<_> = extract_relations(&tagged.entities, &tagged.hedges, &tokens, &lexicon)
            .into_iter()
            .map(|r| (text_of(r.src), text_of(r.dst), r.rtype))
            .collect();
        out.sort();
        out
    }

    fn triples(items: &[(&str, &str, RelationType)]) -> Vec<(String, String, RelationType)> {
        let mut v: Vec<_> = items.iter().map(|(a, b, t)| (a.to_string(), b.to_string(), *t)).collect();
        v.sort();
        v
    }

    #[test]
    fn impression_first_item() {
        use RelationType::*;
        assert_eq!(
            relations_of("Increased right lower lobe opacity, concerning for infection"),
            triples(&[
                ("Increased", "opacity", Modify),
                ("right", "lobe", Modify),
                ("lower", "lobe", Modify),
                ("opacity", "lobe", LocatedAt),
                ("opacity", "infection", SuggestiveOf),
            ])
        );
    }

    #[test]
    fn negated_finding() {
        assert_eq!(
            relations_of("No evidence of pneumothorax"),
            triples(&[("No evidence", "pneumothorax", RelationType::Negation)])
        );
    }

    #[test]
    fn single_entity_has_no_relations() {
        assert!(relations_of("Opacity.").is_empty());
    }

    #[test]
    fn located_at_prefers_preceding_anatomy_on_tie() {
        // "lung" and "base" are both adjacent to "opacity".
        assert!(relations_of("lung opacity base").contains(&(
            "opacity".to_string(),
            "lung".to_string(),
            RelationType::LocatedAt
        )));
    }

    #[test]
    fn located_at_stays_inside_the_clause() {
        let rels = relations_of("Effusion, lung clear");
        assert!(!rels.iter().any(|(_, _, t)| *t == RelationType::LocatedAt));
    }

    #[test]
    fn locative_modifier_falls_back_to_observation() {
        assert_eq!(
            relations_of("small left pleural effusion"),
            triples(&[
                ("small", "pleural effusion", RelationType::Modify),
                ("left", "pleural effusion", RelationType::Modify),
            ])
        );
    }

    fn entity(id: usize, start: usize, etype: EntityType, sentence: usize) -> Entity {
        Entity {
            id,
            token_range: start..start + 1,
            text: format!("e{id}"),
            etype,
            sentence_index: sentence,
            section: "Impression".into(),
        }
    }

    #[test]
    fn empty_graph_json() {
        let g = build_graph("s1", Vec::new()).unwrap();
        assert_eq!(graph_to_json(&g), r#"{"study_id":"s1","entities":[],"relations":[]}"#);
    }

    #[test]
    fn duplicate_relation_stored_once() {
        let es = vec![entity(0, 0, EntityType::Neg, 0), entity(1, 1, EntityType::Obs, 0)];
        let r = Relation {
            src: 0,
            dst: 1,
            rtype: RelationType::Negation,
        };
        let g = build_graph("s", [(es, vec![r, r])]).unwrap();
        assert_eq!(g.relations, [r]);
    }

    #[test]
    fn integrity_errors() {
        let es = || vec![entity(0, 0, EntityType::Neg, 0), entity(1, 1, EntityType::Obs, 1)];
        let dangling = Relation {
            src: 0,
            dst: 7,
            rtype: RelationType::Negation,
        };
        assert!(matches!(build_graph("s", [(es(), vec![dangling])]), Err(Error::Integrity(_))));
        let cross = Relation {
            src: 0,
            dst: 1,
            rtype: RelationType::Negation,
        };
        assert!(matches!(build_graph("s", [(es(), vec![cross])]), Err(Error::Integrity(_))));
        let dup_ids = vec![entity(0, 0, EntityType::Neg, 0), entity(0, 1, EntityType::Obs, 0)];
        assert!(matches!(build_graph("s", [(dup_ids, vec![])]), Err(Error::Integrity(_))));
        let wrong_sig = Relation {
            src: 1,
            dst: 0,
            rtype: RelationType::Negation,
        };
        let same = vec![entity(0, 0, EntityType::Neg, 0), entity(1, 1, EntityType::Obs, 0)];
        assert!(matches!(build_graph("s", [(same, vec![wrong_sig])]), Err(Error::Integrity(_))));
    }

    #[test]
    fn unknown_json_keys_rejected() {
        assert!(graph_from_json(r#"{"study_id":"s","entities":[],"relations":[],"x":1}"#).is_err());
    }

    fn small_graph() -> impl Strategy<Value = ReportGraph> {
        let types = prop::collection::vec((0usize..4, 0usize..2, "[a-z]{1,6}"), 0..8);
        (types, prop::collection::vec((0usize..8, 0usize..8, 0usize..4), 0..12)).prop_map(
            |(ents, rels)| {
                let all = [EntityType::Anat, EntityType::Obs, EntityType::Mod, EntityType::Neg];
                let entities: Vec<Entity> = ents
                    .into_iter()
                    .enumerate()
                    .map(|(i, (t, s, text))| Entity {
                        id: i,
                        token_range: 2 * i..2 * i + 1,
                        text,
                        etype: all[t],
                        sentence_index: s,
                        section: if s == 0 { "Findings".into() } else { "Impression".into() },
                    })
                    .collect();
                let kinds = [
                    RelationType::LocatedAt,
                    RelationType::SuggestiveOf,
                    RelationType::Modify,
                    RelationType::Negation,
                ];
                let relations: Vec<Relation> = rels
                    .into_iter()
                    .filter_map(|(a, b, k)| {
                        let (src, dst) = (entities.get(a)?, entities.get(b)?);
                        let rtype = kinds[k];
                        (a != b
                            && src.sentence_index == dst.sentence_index
                            && rtype.admits(src.etype, dst.etype))
                        .then_some(Relation { src: a, dst: b, rtype })
                    })
                    .collect();
                build_graph("study-x", [(entities, relations)]).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn json_round_trip(g in small_graph()) {
            let json = graph_to_json(&g);
            let back = graph_from_json(&json).unwrap();
            prop_assert_eq!(&back, &g);
            prop_assert_eq!(graph_to_json(&back), json);
        }
    }
}
