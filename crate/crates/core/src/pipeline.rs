//! Report-level wiring: sectioning, tokenization, tagging and graph building.

use std::collections::HashSet;
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_graph, extract_relations, ReportGraph};
use crate::tagger::{default_lexicon, tag_entities, Decoder, Lexicon};
use crate::tokenizer::{sectionize, split_sentences, tokenize_span, Abbreviations, Report, SectionHeaders, Sentence, Token};

/// One line of a reports JSONL file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportInput {
    pub study_id: String,
    pub text: String,
}

/// Reads `{"study_id": ..., "text": ...}` objects, one per line. Blank lines are skipped.
pub fn read_reports_jsonl(reader: impl BufRead, origin: &str) -> Result<Vec<ReportInput>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let report: ReportInput =
            serde_json::from_str(&line).map_err(|e| Error::parse(origin, n + 1, e.to_string()))?;
        out.push(report);
    }
    Ok(out)
}

pub fn ensure_unique_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::input(format!("duplicate study_id {id:?}")));
        }
    }
    Ok(())
}

/// A report with every intermediate product of parsing.
#[derive(Debug, Clone)]
pub struct ParsedReport {
    pub report: Report,
    /// Tokens of all section bodies, in document order. Header words are not included.
    pub tokens: Vec<Token>,
    pub sentences: Vec<Sentence>,
    pub graph: ReportGraph,
}

/// Shared, read-only parsing resources.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub lexicon: Lexicon,
    pub abbreviations: Abbreviations,
    pub headers: SectionHeaders,
    pub decoder: Option<Decoder>,
}

impl Default for Pipeline {
    fn default() -> Self {
        Pipeline {
            lexicon: default_lexicon(),
            abbreviations: Abbreviations::default(),
            headers: SectionHeaders::default(),
            decoder: None,
        }
    }
}

impl Pipeline {
    pub fn parse(&self, study_id: &str, text: &str) -> Result<ParsedReport> {
        let report = sectionize(study_id, text, &self.headers)?;

        let mut tokens = Vec::new();
        let mut sentences = Vec::new();
        for section in &report.sections {
            let offset = tokens.len();
            let section_tokens = tokenize_span(text, section.body.clone());
            for mut s in split_sentences(&section_tokens, &self.abbreviations, &section.name) {
                s.token_range = s.token_range.start + offset..s.token_range.end + offset;
                s.body_start += offset;
                sentences.push(s);
            }
            tokens.extend(section_tokens);
        }

        let mut next_id = 0;
        let mut per_sentence = Vec::with_capacity(sentences.len());
        for (k, sentence) in sentences.iter().enumerate() {
            let tagged = tag_entities(&tokens, sentence, k, &self.lexicon, self.decoder.as_ref(), next_id)?;
            next_id += tagged.entities.len();
            let relations = extract_relations(&tagged.entities, &tagged.hedges, &tokens, &self.lexicon);
            per_sentence.push((tagged.entities, relations));
        }
        let graph = build_graph(study_id, per_sentence)?;

        Ok(ParsedReport {
            report,
            tokens,
            sentences,
            graph,
        })
    }

    /// Parses every report, preserving input order.
    pub fn parse_all(&self, inputs: &[ReportInput]) -> Result<Vec<ParsedReport>> {
        ensure_unique_ids(inputs.iter().map(|r| r.study_id.as_str()))?;
        inputs
            .par_iter()
            .map(|r| self.parse(&r.study_id, &r.text))
            .collect()
    }
}
