//! Per-condition labels from report graphs, and corpus-level labeling.
//!
//! Status values follow the usual CheXpert-style encoding: present `1`,
//! absent `-1`, uncertain `0`, and an empty cell when the condition is not
//! mentioned.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{RelationType, ReportGraph};
use crate::pipeline::{ensure_unique_ids, Pipeline, ReportInput};
use crate::tagger::{EntityType, Lexicon};
use crate::tokenizer::PREAMBLE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "No Finding")]
    NoFinding,
    #[serde(rename = "Pleural Effusion")]
    PleuralEffusion,
    #[serde(rename = "Pneumothorax")]
    Pneumothorax,
    #[serde(rename = "Pneumonia")]
    Pneumonia,
}

impl Condition {
    /// Column order of the labels CSV and of [`encode_binary`].
    pub const CSV_ORDER: [Condition; 4] = [
        Condition::NoFinding,
        Condition::Pneumonia,
        Condition::Pneumothorax,
        Condition::PleuralEffusion,
    ];

    /// Conditions read off the report, in the order used to pick a record's primary class.
    pub const DISEASES: [Condition; 3] =
        [Condition::PleuralEffusion, Condition::Pneumothorax, Condition::Pneumonia];

    /// Every condition, No Finding first.
    pub const ALL: [Condition; 4] = [
        Condition::NoFinding,
        Condition::PleuralEffusion,
        Condition::Pneumothorax,
        Condition::Pneumonia,
    ];

    /// Human-readable name, as used in CSV headers and plan files.
    pub fn name(self) -> &'static str {
        match self {
            Condition::NoFinding => "No Finding",
            Condition::PleuralEffusion => "Pleural Effusion",
            Condition::Pneumothorax => "Pneumothorax",
            Condition::Pneumonia => "Pneumonia",
        }
    }

    /// Identifier used in the lexicon's tag column.
    pub fn key(self) -> &'static str {
        match self {
            Condition::NoFinding => "NO_FINDING",
            Condition::PleuralEffusion => "PLEURAL_EFFUSION",
            Condition::Pneumothorax => "PNEUMOTHORAX",
            Condition::Pneumonia => "PNEUMONIA",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = Error;

    /// Accepts either the display name or the key, case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()) || c.key().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::input(format!("unknown condition {s:?}")))
    }
}

/// Declared in ascending precedence, so `max` consolidates mentions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Status {
    Unmentioned,
    Absent,
    Uncertain,
    Present,
}

impl Status {
    pub fn value(self) -> Option<i8> {
        match self {
            Status::Present => Some(1),
            Status::Absent => Some(-1),
            Status::Uncertain => Some(0),
            Status::Unmentioned => None,
        }
    }

    pub fn csv_cell(self) -> &'static str {
        match self {
            Status::Present => "1",
            Status::Absent => "-1",
            Status::Uncertain => "0",
            Status::Unmentioned => "",
        }
    }

    pub fn from_csv_cell(cell: &str) -> Result<Self> {
        match cell.trim() {
            "1" | "1.0" => Ok(Status::Present),
            "-1" | "-1.0" => Ok(Status::Absent),
            "0" | "0.0" => Ok(Status::Uncertain),
            "" => Ok(Status::Unmentioned),
            other => Err(Error::input(format!("invalid status cell {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConditionLabel {
    pub condition: Condition,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    pub study_id: String,
    /// One entry per condition, in [`Condition::CSV_ORDER`].
    pub labels: [ConditionLabel; 4],
}

impl LabelVector {
    /// Builds a vector from the three disease statuses, deriving No Finding.
    pub fn from_diseases(study_id: &str, status_of: impl Fn(Condition) -> Status) -> Self {
        let diseases: Vec<ConditionLabel> = Condition::DISEASES
            .iter()
            .map(|&condition| ConditionLabel {
                condition,
                status: status_of(condition),
            })
            .collect();
        let no_finding = derive_no_finding(&diseases);
        let labels = Condition::CSV_ORDER.map(|c| match c {
            Condition::NoFinding => no_finding,
            _ => *diseases.iter().find(|l| l.condition == c).expect("every disease labelled"),
        });
        LabelVector {
            study_id: study_id.to_string(),
            labels,
        }
    }

    pub fn status(&self, condition: Condition) -> Status {
        self.labels
            .iter()
            .find(|l| l.condition == condition)
            .map(|l| l.status)
            .expect("label vectors hold every condition")
    }

    pub fn has_uncertain(&self) -> bool {
        self.labels.iter().any(|l| l.status == Status::Uncertain)
    }

    /// First present condition in the order No Finding, Pleural Effusion,
    /// Pneumothorax, Pneumonia.
    pub fn primary_class(&self) -> Option<Condition> {
        Condition::ALL.into_iter().find(|&c| self.status(c) == Status::Present)
    }
}

/// What counts as a mention of each condition, and where mentions count.
#[derive(Debug, Clone)]
pub struct LabelRules {
    phrases: HashMap<Condition, HashSet<String>>,
    hedges: HashSet<String>,
    scored_sections: Vec<String>,
}

/// Sections whose mentions produce labels; History, Comparison and
/// Indication describe the reason for the study rather than findings.
pub const DEFAULT_SCORED_SECTIONS: [&str; 3] = ["Impression", "Findings", PREAMBLE];

impl LabelRules {
    /// Takes condition phrases and hedges from the lexicon's tag column.
    pub fn from_lexicon<S: AsRef<str>>(lexicon: &Lexicon, scored_sections: &[S]) -> Self {
        let phrases = Condition::DISEASES
            .iter()
            .map(|&c| (c, lexicon.condition_phrases(c.key()).into_iter().collect()))
            .collect();
        LabelRules {
            phrases,
            hedges: lexicon.hedge_phrases().into_iter().collect(),
            scored_sections: scored_sections.iter().map(|s| s.as_ref().to_string()).collect(),
        }
    }

    pub fn with_defaults(lexicon: &Lexicon) -> Self {
        LabelRules::from_lexicon(lexicon, &DEFAULT_SCORED_SECTIONS)
    }

    fn scores_section(&self, section: &str) -> bool {
        self.scored_sections.iter().any(|s| s.eq_ignore_ascii_case(section))
    }
}

/// Status of one disease in one report graph.
///
/// Each scored mention is absent when a NEGATION edge points at it,
/// uncertain when it takes part in a SUGGESTIVE_OF edge or is modified by
/// a hedge, and present otherwise. Mentions are consolidated with
/// present > uncertain > absent > unmentioned.
pub fn assign_label(graph: &ReportGraph, condition: Condition, rules: &LabelRules) -> Result<ConditionLabel> {
    if condition == Condition::NoFinding {
        return Err(Error::contract(
            "No Finding is derived from the other labels; use derive_no_finding",
        ));
    }
    let phrases = &rules.phrases[&condition];

    let status = graph
        .entities
        .iter()
        .filter(|e| {
            e.etype == EntityType::Obs
                && rules.scores_section(&e.section)
                && phrases.contains(&e.text.to_lowercase())
        })
        .map(|mention| {
            let negated = graph.incoming(mention.id).any(|r| r.rtype == RelationType::Negation);
            let suggestive = graph
                .relations
                .iter()
                .any(|r| r.rtype == RelationType::SuggestiveOf && (r.src == mention.id || r.dst == mention.id));
            let hedged = graph.incoming(mention.id).any(|r| {
                r.rtype == RelationType::Modify
                    && graph
                        .entity(r.src)
                        .is_some_and(|m| rules.hedges.contains(&m.text.to_lowercase()))
            });
            if negated {
                Status::Absent
            } else if suggestive || hedged {
                Status::Uncertain
            } else {
                Status::Present
            }
        })
        .max()
        .unwrap_or(Status::Unmentioned);

    Ok(ConditionLabel { condition, status })
}

/// No Finding is present exactly when no disease is present or uncertain.
pub fn derive_no_finding(diseases: &[ConditionLabel]) -> ConditionLabel {
    let clear = diseases
        .iter()
        .filter(|l| l.condition != Condition::NoFinding)
        .all(|l| matches!(l.status, Status::Absent | Status::Unmentioned));
    ConditionLabel {
        condition: Condition::NoFinding,
        status: if clear { Status::Present } else { Status::Absent },
    }
}

pub fn label_graph(graph: &ReportGraph, rules: &LabelRules) -> LabelVector {
    LabelVector::from_diseases(&graph.study_id, |c| {
        assign_label(graph, c, rules).expect("diseases are labelable").status
    })
}

/// Labels every report in input order.
///
/// With `drop_uncertain`, studies holding any uncertain label are left out.
pub fn label_corpus(
    reports: &[ReportInput],
    pipeline: &Pipeline,
    rules: &LabelRules,
    drop_uncertain: bool,
) -> Result<Vec<LabelVector>> {
    ensure_unique_ids(reports.iter().map(|r| r.study_id.as_str()))?;
    let labels: Vec<LabelVector> = reports
        .par_iter()
        .map(|r| pipeline.parse(&r.study_id, &r.text).map(|p| label_graph(&p.graph, rules)))
        .collect::<Result<_>>()?;
    Ok(labels
        .into_iter()
        .filter(|v| !(drop_uncertain && v.has_uncertain()))
        .collect())
}

/// Bits in the order (No Finding, Pneumonia, Pneumothorax, Effusion); 1 only for present.
pub fn encode_binary(v: &LabelVector) -> [u8; 4] {
    Condition::CSV_ORDER.map(|c| u8::from(v.status(c) == Status::Present))
}

pub const LABELS_CSV_HEADER: &str = "study_id,No Finding,Pneumonia,Pneumothorax,Pleural Effusion";

pub fn labels_to_csv(labels: &[LabelVector]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(LABELS_CSV_HEADER.split(',')).expect("in-memory write");
    for v in labels {
        let mut row = vec![v.study_id.as_str()];
        row.extend(Condition::CSV_ORDER.iter().map(|&c| v.status(c).csv_cell()));
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 input gives UTF-8 output")
}

/// Reads a labels CSV. Columns are matched by header name; extra columns are ignored.
pub fn labels_from_csv(text: &str) -> Result<Vec<LabelVector>> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| Error::input(e.to_string()))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::input(format!("labels CSV lacks a {name:?} column")))
    };
    let id_col = column("study_id")?;
    let cols: Vec<(Condition, usize)> = Condition::CSV_ORDER
        .iter()
        .map(|&c| column(c.name()).map(|i| (c, i)))
        .collect::<Result<_>>()?;

    let mut out = Vec::new();
    for (n, record) in r.records().enumerate() {
        let record = record.map_err(|e| Error::input(e.to_string()))?;
        let line = n + 2;
        let cell = |i: usize| record.get(i).unwrap_or("");
        let mut labels = Condition::CSV_ORDER.map(|condition| ConditionLabel {
            condition,
            status: Status::Unmentioned,
        });
        for (slot, &(condition, i)) in labels.iter_mut().zip(&cols) {
            let status = Status::from_csv_cell(cell(i))
                .map_err(|e| Error::parse("labels CSV", line, e.to_string()))?;
            *slot = ConditionLabel { condition, status };
        }
        out.push(LabelVector {
            study_id: cell(id_col).to_string(),
            labels,
        });
    }
    Ok(out)
}
