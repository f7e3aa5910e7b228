//! The `radlabel` command line.
//!
//! Exit status is 0 on success, 1 for bad input or usage, and 2 when an
//! internal consistency check fails. Diagnostics go to standard error; data
//! goes to `--out` files or, when `--out` is omitted, to standard output.

pub mod config;

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use radlabel::analysis::{self, Facet, FrequencyKind};
use radlabel::gradcam::{self, GrayImage, Resample, Tensor3};
use radlabel::graph::graph_to_json;
use radlabel::labeler::{self, Condition, LabelRules, LabelVector, Status};
use radlabel::metrics::{self, AucMethod};
use radlabel::numerics::{self, Dataset, LabelWeights, TrainConfig};
use radlabel::pipeline::{read_reports_jsonl, ReportInput};
use radlabel::rebalance::{self, RebalancePlan, WeightScheme};
use radlabel::tokenizer::Token;
use radlabel::Error;
use serde::Serialize;

use crate::config::{load_config, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "radlabel", version, about = "Label chest radiograph reports and evaluate classifiers")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random choice; overrides the configuration and plan seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Io {
    /// Input file.
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,

    /// Output file; standard output when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split reports into sections, sentences and tokens (JSONL out).
    Tokenize(Io),
    /// Build the entity/relation graph of each report (JSONL out).
    Parse(Io),
    /// Assign condition labels to each report (CSV out).
    Label {
        #[command(flatten)]
        io: Io,
        /// Leave out studies with any uncertain label.
        #[arg(long)]
        drop_uncertain: bool,
    },
    /// Pairwise report similarity (CSV out).
    Similarity {
        #[command(flatten)]
        io: Io,
        /// noun_phrases, verbs or entities; repeat for several. Defaults to all three.
        #[arg(long)]
        facet: Vec<String>,
        /// Use the union as denominator instead of the larger set.
        #[arg(long)]
        jaccard: bool,
    },
    /// Verb or entity frequencies over a corpus (CSV out).
    Freq {
        #[command(flatten)]
        io: Io,
        /// verb or entity.
        #[arg(long)]
        kind: String,
        /// Keep only the most frequent terms.
        #[arg(long)]
        top: Option<usize>,
    },
    /// Per-condition precision, recall, F1 and AUROC from a predictions CSV.
    Metrics {
        #[command(flatten)]
        io: Io,
        /// Score at or above which a prediction counts as positive.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// rank or trapezoid.
        #[arg(long, default_value = "rank")]
        method: String,
        /// Also write the plain-text table here.
        #[arg(long, value_name = "PATH")]
        table: Option<PathBuf>,
    },
    /// Present/absent counts per condition from a labels CSV.
    Prevalence {
        #[command(flatten)]
        io: Io,
        /// Write class weights here.
        #[arg(long, value_name = "PATH")]
        weights: Option<PathBuf>,
        /// inverse-freq or none.
        #[arg(long, default_value = "inverse-freq")]
        scheme: String,
    },
    /// Down-sample a labels CSV according to a plan file.
    Rebalance {
        #[command(flatten)]
        io: Io,
        #[arg(long, value_name = "PATH")]
        plan: PathBuf,
    },
    /// Train the sigmoid head on a feature file.
    TrainHead {
        /// Feature CSV: study_id then feature columns.
        #[command(flatten)]
        io: Io,
        /// Labels CSV; a condition is a positive target only when present.
        #[arg(long, value_name = "PATH")]
        labels: PathBuf,
        /// CSV of study_id,split with split = train or val.
        #[arg(long, value_name = "PATH")]
        split: PathBuf,
        /// Per-epoch losses as CSV.
        #[arg(long, value_name = "PATH")]
        history: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        learning_rate: f64,
        #[arg(long, default_value_t = 200)]
        max_epochs: usize,
        #[arg(long, default_value_t = 10)]
        patience: usize,
        /// inverse-freq or none.
        #[arg(long, default_value = "inverse-freq")]
        weights: String,
    },
    /// Grad-CAM heatmap from activation and gradient tensors (PGM out).
    Gradcam {
        #[arg(long, value_name = "PATH")]
        maps: PathBuf,
        #[arg(long, value_name = "PATH")]
        grads: PathBuf,
        /// Output size as WIDTHxHEIGHT.
        #[arg(long, default_value = "320x320")]
        size: String,
        /// bilinear or nearest.
        #[arg(long, default_value = "bilinear")]
        mode: String,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Resize a grayscale image and scale it to [0, 1] (tensor text out).
    PreprocessImage {
        #[command(flatten)]
        io: Io,
        /// Output size as WIDTHxHEIGHT.
        #[arg(long, default_value = "320x320")]
        size: String,
    },
}

/// Where output goes and what is recorded alongside it.
struct Context<'a> {
    config: PipelineConfig,
    seed: Option<u64>,
    command: &'static str,
    argv: Vec<String>,
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

#[derive(Serialize)]
struct Provenance<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    args: &'a [String],
    seed: Option<u64>,
    config: &'a PipelineConfig,
}

impl Context<'_> {
    fn resolve(&self, path: &Path) -> PathBuf {
        match &self.config.output_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }

    /// Writes `contents` to `out` plus a provenance sidecar, or to standard output.
    fn emit(&mut self, out: Option<&Path>, contents: &str) -> Result<(), Error> {
        let Some(out) = out else {
            return self.stdout.write_all(contents.as_bytes()).map_err(Error::from);
        };
        let path = self.resolve(out);
        write_file(&path, contents)?;
        let provenance = Provenance {
            tool: "radlabel",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            args: &self.argv,
            seed: self.seed,
            config: &self.config,
        };
        let mut sidecar = serde_json::to_string_pretty(&provenance)?;
        sidecar.push('\n');
        let mut name = path.clone().into_os_string();
        name.push(".provenance.json");
        write_file(Path::new(&name), &sidecar)
    }

    fn note(&mut self, msg: &str) {
        let _ = writeln!(self.stderr, "{msg}");
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))
}

fn read_reports(path: &Path) -> Result<Vec<ReportInput>, Error> {
    read_reports_jsonl(read_file(path)?.as_bytes(), &path.display().to_string())
}

fn read_labels(path: &Path) -> Result<Vec<LabelVector>, Error> {
    labeler::labels_from_csv(&read_file(path)?).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn parse_size(size: &str) -> Result<(usize, usize), Error> {
    let bad = || Error::Input(format!("size {size:?} is not WIDTHxHEIGHT with positive integers"));
    let (w, h) = size.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

#[derive(Serialize)]
struct TokenizedSentence<'a> {
    section: &'a str,
    tokens: &'a [Token],
}

#[derive(Serialize)]
struct TokenizedReport<'a> {
    study_id: &'a str,
    sentences: Vec<TokenizedSentence<'a>>,
}

fn execute(command: Command, ctx: &mut Context) -> Result<(), Error> {
    match command {
        Command::Tokenize(io) => {
            let parsed = ctx.config.build_pipeline()?.parse_all(&read_reports(&io.input)?)?;
            let mut out = String::new();
            for p in &parsed {
                let report = TokenizedReport {
                    study_id: &p.report.study_id,
                    sentences: p
                        .sentences
                        .iter()
                        .map(|s| TokenizedSentence {
                            section: &s.section,
                            tokens: &p.tokens[s.token_range.clone()],
                        })
                        .collect(),
                };
                out.push_str(&serde_json::to_string(&report)?);
                out.push('\n');
            }
            ctx.emit(io.out.as_deref(), &out)
        }
        Command::Parse(io) => {
            let parsed = ctx.config.build_pipeline()?.parse_all(&read_reports(&io.input)?)?;
            let mut out = String::new();
            for p in &parsed {
                p.graph.validate()?;
                out.push_str(&graph_to_json(&p.graph));
                out.push('\n');
            }
            ctx.emit(io.out.as_deref(), &out)
        }
        Command::Label { io, drop_uncertain } => {
            let pipeline = ctx.config.build_pipeline()?;
            let rules = LabelRules::from_lexicon(&pipeline.lexicon, &ctx.config.scored_sections);
            let reports = read_reports(&io.input)?;
            let drop = drop_uncertain || ctx.config.drop_uncertain;
            let labels = labeler::label_corpus(&reports, &pipeline, &rules, drop)?;
            ctx.note(&format!("labeled {} of {} reports", labels.len(), reports.len()));
            ctx.emit(io.out.as_deref(), &labeler::labels_to_csv(&labels))
        }
        Command::Similarity { io, facet, jaccard } => {
            let facets = if facet.is_empty() {
                Facet::ALL.to_vec()
            } else {
                facet.iter().map(|f| f.parse()).collect::<Result<Vec<Facet>, _>>()?
            };
            let verbs = ctx.config.verb_list()?;
            let parsed = ctx.config.build_pipeline()?.parse_all(&read_reports(&io.input)?)?;
            let features: Vec<_> = parsed.iter().map(|p| analysis::feature_sets(p, &verbs)).collect();
            let ids: Vec<&str> = parsed.iter().map(|p| p.report.study_id.as_str()).collect();
            let rows = analysis::similarity_matrix(&ids, &features, &facets, jaccard);
            ctx.emit(io.out.as_deref(), &analysis::similarity_to_csv(&rows))
        }
        Command::Freq { io, kind, top } => {
            let kind: FrequencyKind = kind.parse()?;
            let verbs = ctx.config.verb_list()?;
            let parsed = ctx.config.build_pipeline()?.parse_all(&read_reports(&io.input)?)?;
            let mut table = analysis::frequency_table(&parsed, kind, &verbs);
            if let Some(n) = top {
                table.rows.truncate(n);
            }
            ctx.emit(io.out.as_deref(), &analysis::frequency_to_csv(&table))
        }
        Command::Metrics {
            io,
            threshold,
            method,
            table,
        } => {
            let method: AucMethod = method.parse()?;
            if !threshold.is_finite() {
                return Err(Error::Input("threshold must be finite".into()));
            }
            let predictions = metrics::read_predictions_csv(&read_file(&io.input)?, &io.input.display().to_string())?;
            let report = metrics::evaluate(&predictions, threshold, method)?;
            let text = metrics::report_to_table(&report);
            if !report.undefined.is_empty() {
                ctx.note(&format!("undefined: {}", report.undefined.join(", ")));
            }
            if let Some(path) = table {
                ctx.emit(Some(&path), &text)?;
            }
            match io.out {
                Some(path) => ctx.emit(Some(&path), &metrics::report_to_json(&report)),
                None => ctx.emit(None, &text),
            }
        }
        Command::Prevalence { io, weights, scheme } => {
            let scheme: WeightScheme = scheme.parse()?;
            let table = rebalance::prevalence(&read_labels(&io.input)?);
            if let Some(path) = weights {
                let w = rebalance::class_weights(&table, scheme)?;
                ctx.emit(Some(&path), &rebalance::weights_to_csv(&w))?;
            }
            ctx.emit(io.out.as_deref(), &table.to_csv())
        }
        Command::Rebalance { io, plan } => {
            let mut plan = RebalancePlan::from_json(&read_file(&plan)?)
                .map_err(|e| Error::Input(format!("{}: {e}", plan.display())))?;
            if let Some(seed) = ctx.seed {
                plan.seed = seed;
            }
            let labels = read_labels(&io.input)?;
            let kept = rebalance::downsample(&labels, &plan)?;
            ctx.note(&format!("kept {} of {} records (seed {})", kept.len(), labels.len(), plan.seed));
            ctx.emit(io.out.as_deref(), &labeler::labels_to_csv(&kept))
        }
        Command::TrainHead {
            io,
            labels,
            split,
            history,
            learning_rate,
            max_epochs,
            patience,
            weights,
        } => {
            let scheme: WeightScheme = weights.parse()?;
            let features = numerics::read_features_csv(&read_file(&io.input)?, &io.input.display().to_string())?;
            let targets: HashMap<String, LabelVector> = read_labels(&labels)?
                .into_iter()
                .map(|v| (v.study_id.clone(), v))
                .collect();
            let folds = numerics::read_split_csv(&read_file(&split)?, &split.display().to_string())?;

            let mut train = Dataset::default();
            let mut val = Dataset::default();
            let mut train_labels = Vec::new();
            for (id, x) in features {
                let Some(fold) = folds.get(&id) else { continue };
                let v = targets
                    .get(&id)
                    .ok_or_else(|| Error::Input(format!("study {id:?} has features but no labels")))?;
                let y = Condition::CSV_ORDER.map(|c| u8::from(v.status(c) == Status::Present)).to_vec();
                match fold.as_str() {
                    "train" => {
                        train.x.push(x);
                        train.y.push(y);
                        train_labels.push(v.clone());
                    }
                    "val" => {
                        val.x.push(x);
                        val.y.push(y);
                    }
                    _ => {}
                }
            }
            let class_weights = rebalance::class_weights(&rebalance::prevalence(&train_labels), scheme)?;
            let cfg = TrainConfig {
                learning_rate,
                max_epochs,
                patience,
                weights: LabelWeights::positive(Condition::CSV_ORDER.iter().map(|c| class_weights[c]).collect()),
                seed: ctx.seed.unwrap_or(ctx.config.seed),
            };
            let result = numerics::train_head(&train, &val, &cfg)?;
            ctx.note(&format!(
                "best epoch {} of {} (train {}, val {})",
                result.best_epoch,
                result.history.len(),
                train.len(),
                val.len()
            ));
            if let Some(path) = history {
                ctx.emit(Some(&path), &numerics::history_to_csv(&result.history))?;
            }
            ctx.emit(io.out.as_deref(), &result.params.to_json())
        }
        Command::Gradcam {
            maps,
            grads,
            size,
            mode,
            out,
        } => {
            let (w, h) = parse_size(&size)?;
            let mode: Resample = mode.parse()?;
            let load = |p: &Path| -> Result<Tensor3, Error> { gradcam::parse_tensor(&read_file(p)?, &p.display().to_string()) };
            let heat = gradcam::gradcam(&load(&maps)?, &load(&grads)?, h, w, mode)?;
            ctx.emit(out.as_deref(), &gradcam::heatmap_to_pgm(&heat))
        }
        Command::PreprocessImage { io, size } => {
            let (w, h) = parse_size(&size)?;
            let img = image::open(&io.input)
                .map_err(|e| Error::Input(format!("cannot decode {}: {e}", io.input.display())))?
                .to_luma8();
            let gray = GrayImage {
                h: img.height() as usize,
                w: img.width() as usize,
                pixels: img.into_raw(),
            };
            let map = gradcam::preprocess_image(&gray, h, w)?;
            let tensor = Tensor3::new(1, map.h, map.w, map.data)?;
            ctx.emit(io.out.as_deref(), &gradcam::tensor_to_text(&tensor))
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Tokenize(_) => "tokenize",
        Command::Parse(_) => "parse",
        Command::Label { .. } => "label",
        Command::Similarity { .. } => "similarity",
        Command::Freq { .. } => "freq",
        Command::Metrics { .. } => "metrics",
        Command::Prevalence { .. } => "prevalence",
        Command::Rebalance { .. } => "rebalance",
        Command::TrainHead { .. } => "train-head",
        Command::Gradcam { .. } => "gradcam",
        Command::PreprocessImage { .. } => "preprocess-image",
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit status.
pub fn run_command<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                1
            } else {
                let _ = write!(stdout, "{text}");
                0
            };
        }
    };

    let config = match &cli.config {
        Some(path) => load_config(path),
        None => Ok(PipelineConfig::default()),
    };
    let config = match config {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(stderr, "radlabel: {e}");
            return 1;
        }
    };

    let mut ctx = Context {
        config,
        seed: cli.seed,
        command: command_name(&cli.command),
        argv: argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect(),
        stdout,
        stderr,
    };
    match execute(cli.command, &mut ctx) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(ctx.stderr, "radlabel: {e}");
            exit_code(&e)
        }
    }
}

/// 2 for broken internal invariants, 1 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_internal() {
        2
    } else {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Integrity("dangling edge".into())), 2);
        assert_eq!(exit_code(&Error::Input("missing".into())), 1);
        assert_eq!(exit_code(&Error::Undefined("auroc".into())), 1);
    }

    #[test]
    fn sizes() {
        assert_eq!(parse_size("320x240").unwrap(), (320, 240));
        assert!(parse_size("0x4").is_err());
        assert!(parse_size("320").is_err());
    }
}
