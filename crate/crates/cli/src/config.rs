//! Pipeline configuration file.
//!
//! Every key is optional; an empty file yields [`PipelineConfig::default`].
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use radlabel::analysis::VerbList;
use radlabel::labeler::DEFAULT_SCORED_SECTIONS;
use radlabel::pipeline::Pipeline;
use radlabel::tagger::{default_lexicon, Decoder, Lexicon, DEFAULT_BOOST};
use radlabel::tokenizer::{Abbreviations, SectionHeaders, DEFAULT_SECTION_HEADERS};
use radlabel::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Lexicon TSV replacing the built-in one.
    pub lexicon: Option<PathBuf>,
    /// Abbreviation list replacing the built-in one.
    pub abbreviations: Option<PathBuf>,
    /// Verb list used by similarity and frequency analysis.
    pub verbs: Option<PathBuf>,
    pub section_headers: Vec<String>,
    /// Sections whose mentions produce labels.
    pub scored_sections: Vec<String>,
    /// Hedge connector phrases added to the lexicon.
    pub extra_hedges: Vec<String>,
    /// Tag through the sequence decoder instead of plain lexicon matches.
    pub use_decoder: bool,
    pub emission_boost: f64,
    pub drop_uncertain: bool,
    pub seed: u64,
    /// Directory that relative `--out` paths are written under.
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            lexicon: None,
            abbreviations: None,
            verbs: None,
            section_headers: DEFAULT_SECTION_HEADERS.iter().map(|s| s.to_string()).collect(),
            scored_sections: DEFAULT_SCORED_SECTIONS.iter().map(|s| s.to_string()).collect(),
            extra_hedges: Vec::new(),
            use_decoder: false,
            emission_boost: DEFAULT_BOOST,
            drop_uncertain: false,
            seed: 0,
            output_dir: None,
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl PipelineConfig {
    /// Strict parse; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| line_of(text, s.start));
            Error::Parse {
                path: origin.to_string(),
                line,
                msg: e.message().to_string(),
            }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    fn paths_mut(&mut self) -> [&mut Option<PathBuf>; 4] {
        [
            &mut self.lexicon,
            &mut self.abbreviations,
            &mut self.verbs,
            &mut self.output_dir,
        ]
    }

    pub fn build_pipeline(&self) -> Result<Pipeline, Error> {
        let mut lexicon = match &self.lexicon {
            Some(path) => Lexicon::load(path)?,
            None => default_lexicon(),
        };
        for hedge in &self.extra_hedges {
            lexicon.add_hedge(hedge);
        }
        let abbreviations = match &self.abbreviations {
            Some(path) => Abbreviations::parse(&std::fs::read_to_string(path)?),
            None => Abbreviations::default(),
        };
        let decoder = self.use_decoder.then(|| Decoder {
            boost: self.emission_boost,
            ..Decoder::default()
        });
        Ok(Pipeline {
            lexicon,
            abbreviations,
            headers: SectionHeaders::new(self.section_headers.iter().cloned()),
            decoder,
        })
    }

    pub fn verb_list(&self) -> Result<VerbList, Error> {
        match &self.verbs {
            Some(path) => VerbList::load(path),
            None => Ok(VerbList::default()),
        }
    }
}

/// Reads, validates and resolves a configuration file.
pub fn load_config(path: &Path) -> Result<PipelineConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
    let mut config = PipelineConfig::parse(&text, &path.display().to_string())?;

    let base = path.parent().unwrap_or(Path::new(""));
    for p in config.paths_mut().into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    for (key, p) in [
        ("lexicon", &config.lexicon),
        ("abbreviations", &config.abbreviations),
        ("verbs", &config.verbs),
    ] {
        if let Some(p) = p {
            if !p.is_file() {
                return Err(Error::Input(format!("config key {key}: file {} does not exist", p.display())));
            }
        }
    }
    if let Some(dir) = &config.output_dir {
        if !dir.is_dir() {
            return Err(Error::Input(format!(
                "config key output_dir: directory {} does not exist",
                dir.display()
            )));
        }
    }
    if !config.emission_boost.is_finite() {
        return Err(Error::Input("config key emission_boost must be finite".into()));
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::parse("", "c.toml").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn unknown_key_is_named_with_its_line() {
        let err = PipelineConfig::parse("seed = 1\nfoo = 2\n", "c.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("c.toml:2:"), "{msg}");
        assert!(msg.contains("foo"), "{msg}");
    }

    #[test]
    fn wrong_type_is_rejected() {
        assert!(PipelineConfig::parse("seed = \"x\"\n", "c.toml").is_err());
    }

    #[test]
    fn serialization_round_trips() {
        let c = PipelineConfig {
            extra_hedges: vec!["worrisome for".into()],
            lexicon: Some("lex.tsv".into()),
            drop_uncertain: true,
            seed: 99,
            ..PipelineConfig::default()
        };
        assert_eq!(PipelineConfig::parse(&c.to_toml(), "c").unwrap(), c);
    }

    #[test]
    fn missing_referenced_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "lexicon = \"nope.tsv\"\n").unwrap();
        assert!(matches!(load_config(&path), Err(Error::Input(_))));
        std::fs::write(dir.path().join("nope.tsv"), "lung\tANAT\n").unwrap();
        let c = load_config(&path).unwrap();
        assert_eq!(c.lexicon, Some(dir.path().join("nope.tsv")));
        assert!(c.build_pipeline().unwrap().lexicon.get("lung").is_some());
    }
}
