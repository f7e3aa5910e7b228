//! Linear-chain decoding over entity tags.
//!
//! A tag sequence `y` over `n` positions scores
//! `sum_i e(i, y_i) + sum_{i>=1} s(y_{i-1}, y_i)`. [`viterbi_decode`]
//! finds the best sequence in `O(n * T^2)`; [`brute_force_decode`]
//! enumerates all `T^n` sequences and exists to check it.
//!
//! Both break ties the same way: among optimal sequences the one that is
//! lexicographically smallest in tag order (`ANAT < OBS < MOD < NEG < O`)
//! wins, comparing the first position first.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tag alphabet in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tag {
    #[serde(rename = "ANAT")]
    Anat,
    #[serde(rename = "OBS")]
    Obs,
    #[serde(rename = "MOD")]
    Mod,
    #[serde(rename = "NEG")]
    Neg,
    O,
}

pub const NUM_TAGS: usize = 5;

impl Tag {
    pub const ALL: [Tag; NUM_TAGS] = [Tag::Anat, Tag::Obs, Tag::Mod, Tag::Neg, Tag::O];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Tag {
        Tag::ALL[i]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Anat => "ANAT",
            Tag::Obs => "OBS",
            Tag::Mod => "MOD",
            Tag::Neg => "NEG",
            Tag::O => "O",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Emission scores per position and transition scores per ordered tag pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    /// `emissions[i][t]` scores tag `t` at position `i`.
    pub emissions: Vec<[f64; NUM_TAGS]>,
    /// `transitions[p][t]` scores moving from tag `p` to tag `t`.
    pub transitions: [[f64; NUM_TAGS]; NUM_TAGS],
}

impl ScoreTable {
    pub fn zeros(n: usize) -> Self {
        ScoreTable {
            emissions: vec![[0.0; NUM_TAGS]; n],
            transitions: [[0.0; NUM_TAGS]; NUM_TAGS],
        }
    }

    pub fn len(&self) -> usize {
        self.emissions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.emissions.is_empty()
    }

    pub fn transition(&self, prev: Tag, next: Tag) -> f64 {
        self.transitions[prev.index()][next.index()]
    }

    /// Score of one specific tag sequence, summed left to right.
    ///
    /// Both decoders report their score through this function so that equal
    /// sequences always carry bit-identical scores.
    pub fn sequence_score(&self, tags: &[Tag]) -> f64 {
        assert_eq!(tags.len(), self.len(), "tag sequence length must match the table");
        let mut score = 0.0;
        for (i, &tag) in tags.iter().enumerate() {
            score += self.emissions[i][tag.index()];
            if i > 0 {
                score += self.transition(tags[i - 1], tag);
            }
        }
        score
    }
}

/// Best tag sequence and its score.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tags: Vec<Tag>,
    pub score: f64,
}

/// Maximum sequence length [`brute_force_decode`] accepts.
pub const BRUTE_FORCE_LIMIT: usize = 8;

pub fn viterbi_decode(table: &ScoreTable) -> Result<Decoded> {
    let n = table.len();
    if n == 0 {
        return Err(Error::EmptySequence);
    }

    // best[i][t]: best score of positions i..n given y_i = t. Working from
    // the right lets the forward pass below pick the smallest tag at every
    // step, which yields the lexicographically smallest optimum.
    let mut best = vec![[0.0; NUM_TAGS]; n];
    best[n - 1] = table.emissions[n - 1];
    for i in (0..n - 1).rev() {
        for t in 0..NUM_TAGS {
            let tail = (0..NUM_TAGS)
                .map(|u| table.transitions[t][u] + best[i + 1][u])
                .fold(f64::NEG_INFINITY, f64::max);
            best[i][t] = table.emissions[i][t] + tail;
        }
    }

    let mut tags = Vec::with_capacity(n);
    tags.push(Tag::from_index(argmax_first(&best[0])));
    for i in 1..n {
        let prev = tags[i - 1].index();
        let candidates: [f64; NUM_TAGS] =
            std::array::from_fn(|u| table.transitions[prev][u] + best[i][u]);
        tags.push(Tag::from_index(argmax_first(&candidates)));
    }

    let score = table.sequence_score(&tags);
    Ok(Decoded { tags, score })
}

fn argmax_first(values: &[f64; NUM_TAGS]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Exhaustive search over all `5^n` tag sequences, `n <= 8`.
pub fn brute_force_decode(table: &ScoreTable) -> Result<Decoded> {
    let n = table.len();
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::Size {
            got: n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }

    // Odometer over tag indices, first position most significant, so the
    // enumeration is in lexicographic order and a strict `>` keeps the
    // smallest optimum.
    let mut digits = vec![0usize; n];
    let mut tags = vec![Tag::Anat; n];
    let mut best: Option<Decoded> = None;
    loop {
        for (slot, &d) in tags.iter_mut().zip(&digits) {
            *slot = Tag::from_index(d);
        }
        let score = table.sequence_score(&tags);
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(Decoded {
                tags: tags.clone(),
                score,
            });
        }

        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(best.expect("at least one sequence enumerated"));
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < NUM_TAGS {
                break;
            }
            digits[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(emissions: [f64; NUM_TAGS]) -> ScoreTable {
        ScoreTable {
            emissions: vec![emissions],
            transitions: [[0.0; NUM_TAGS]; NUM_TAGS],
        }
    }

    #[test]
    fn single_position_is_argmax_emission() {
        let table = single([0.0, 2.0, 0.0, 0.0, 0.5]);
        for decoded in [viterbi_decode(&table).unwrap(), brute_force_decode(&table).unwrap()] {
            assert_eq!(decoded.tags, [Tag::Obs]);
            assert_eq!(decoded.score, 2.0);
        }
    }

    #[test]
    fn only_nonzero_transition_wins() {
        let mut table = ScoreTable::zeros(2);
        table.transitions[Tag::Anat.index()][Tag::Anat.index()] = 1.0;
        for decoded in [viterbi_decode(&table).unwrap(), brute_force_decode(&table).unwrap()] {
            assert_eq!(decoded.tags, [Tag::Anat, Tag::Anat]);
            assert_eq!(decoded.score, 1.0);
        }
    }

    #[test]
    fn all_zero_table_prefers_smallest_tags() {
        let table = ScoreTable::zeros(3);
        assert_eq!(viterbi_decode(&table).unwrap().tags, [Tag::Anat; 3]);
        assert_eq!(brute_force_decode(&table).unwrap().tags, [Tag::Anat; 3]);
    }

    #[test]
    fn tie_break_is_lexicographic_not_greedy() {
        // (OBS, O), (NEG, ANAT) and (NEG, O) all score 1. A forward pass with
        // smallest-predecessor backpointers would return (NEG, ANAT).
        let mut table = ScoreTable::zeros(2);
        table.emissions[0][Tag::Neg.index()] = 1.0;
        table.emissions[0][Tag::Obs.index()] = 0.5;
        table.transitions[Tag::Obs.index()][Tag::O.index()] = 0.5;
        for t in 0..NUM_TAGS {
            table.emissions[1][t] = -1.0;
        }
        table.emissions[1][Tag::Anat.index()] = 0.0;
        table.emissions[1][Tag::O.index()] = 0.0;
        let v = viterbi_decode(&table).unwrap();
        assert_eq!(v, brute_force_decode(&table).unwrap());
        assert_eq!(v.tags, [Tag::Obs, Tag::O]);
    }

    #[test]
    fn empty_table_is_an_error() {
        let table = ScoreTable::zeros(0);
        assert!(matches!(viterbi_decode(&table), Err(Error::EmptySequence)));
        assert!(matches!(brute_force_decode(&table), Err(Error::EmptySequence)));
    }

    #[test]
    fn brute_force_size_guard() {
        let table = ScoreTable::zeros(8);
        let decoded = brute_force_decode(&table).unwrap();
        assert_eq!(decoded.tags.len(), 8);
        assert!(matches!(
            brute_force_decode(&ScoreTable::zeros(9)),
            Err(Error::Size { got: 9, limit: 8 })
        ));
    }

    fn table_strategy(max_len: usize) -> impl Strategy<Value = ScoreTable> {
        let row = prop::array::uniform5(-1.0f64..1.0);
        (
            prop::collection::vec(row, 1..=max_len),
            prop::array::uniform5(prop::array::uniform5(-1.0f64..1.0)),
        )
            .prop_map(|(emissions, transitions)| ScoreTable {
                emissions,
                transitions,
            })
    }

    proptest! {
        #[test]
        fn viterbi_matches_exhaustive_search(table in table_strategy(5)) {
            prop_assert_eq!(viterbi_decode(&table).unwrap(), brute_force_decode(&table).unwrap());
        }

        #[test]
        fn optimum_dominates_any_candidate(
            table in table_strategy(6),
            picks in prop::collection::vec(prop::collection::vec(0usize..NUM_TAGS, 6), 100),
        ) {
            let best = viterbi_decode(&table).unwrap();
            for pick in picks {
                let tags: Vec<Tag> = pick[..table.len()].iter().map(|&i| Tag::from_index(i)).collect();
                prop_assert!(best.score >= table.sequence_score(&tags));
            }
        }

        #[test]
        fn emission_shift_moves_score_only(table in table_strategy(6), pos in 0usize..6, c in -3.0f64..3.0) {
            let pos = pos % table.len();
            let mut shifted = table.clone();
            for v in shifted.emissions[pos].iter_mut() {
                *v += c;
            }
            let a = viterbi_decode(&table).unwrap();
            let b = viterbi_decode(&shifted).unwrap();
            prop_assert_eq!(&a.tags, &b.tags);
            prop_assert!((b.score - a.score - c).abs() < 1e-12);
        }
    }
}
