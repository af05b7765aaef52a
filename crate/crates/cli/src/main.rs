mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use hypo_core::detector::{self, DetectorConfig, DetectorModel, LabeledSentence};
use hypo_core::evalkit::{self, ReportRow};
use hypo_core::explainer;
use hypo_core::ingest::{self, CandidateRecord};
use hypo_core::lexicon::WordVectorTable;
use hypo_core::linker::{self, LinkExample, LinkerConfig, LinkerModel, Task};
use hypo_core::pipeline::{self, Models, RunOptions};
use hypo_core::synth;
use hypo_core::tagger::{self, TagSequence, TaggerConfig, TaggerModel};

/// Reads hypothesis statements out of scholarly documents.
///
/// Config files are TOML with the fields of the matching trainer, all
/// optional:
///
///   detector: ngram, lr, dim, loss ("softmax" | "negative_sampling"),
///             epochs, neg_samples, bucket_count, seed
///
///   tagger:   pad_len, lstm1_units, lstm2_units, spatial_dropout,
///             recurrent_dropout, optimizer_lr, rho, epsilon, batch_size,
///             epochs, validation_fraction, seed
///
///   linker:   max_n, min_count, grid, folds, repeats, seed,
///             fixed_reg_strength = [causality, direction]
///
/// A global --seed overrides the seed of any config.
#[derive(Parser, Debug)]
#[command(name = "hyporeader", version, verbatim_doc_comment)]
struct Cli {
    /// Seed for every seeded step; overrides config files.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// TOML config for the selected trainer.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Command for non-text inputs; `{input}` is replaced by the file path.
    #[arg(long, global = true, env = "HYPOREADER_EXTRACTOR")]
    extractor: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write trigger-matched candidate sentences of a directory as JSONL.
    Extract {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = ingest::MAX_WORDS)]
        max_words: usize,
    },
    /// Train a model.
    Train {
        #[command(subcommand)]
        model: TrainCommand,
    },
    /// Read a directory of documents into the hypothesis table (CSV).
    Run(RunArgs),
    /// Cross-validate or hold out a trainer and print a metrics table.
    Eval(EvalArgs),
    /// Explain a detector decision by word removal (JSON).
    Explain {
        #[arg(long)]
        detector: PathBuf,
        #[arg(long)]
        text: String,
        /// Random masks on top of the leave-one-out ones; default 5 per token.
        #[arg(long)]
        n_random: Option<usize>,
    },
    /// Generate synthetic corpora.
    Synth {
        #[command(subcommand)]
        kind: SynthCommand,
    },
}

#[derive(Subcommand, Debug)]
enum TrainCommand {
    /// JSONL {"text","label"}, or candidate JSONL with --labels.
    Detector {
        #[arg(long)]
        input: PathBuf,
        /// One 0/1 per line, aligned with the candidate JSONL.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// JSONL {"tokens","tags"} and/or a hypothesis table CSV via --table.
    Tagger {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        table: Option<PathBuf>,
        /// Word vectors in GloVe text format.
        #[arg(long)]
        glove: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// CSV epoch,train_acc,val_acc.
        #[arg(long)]
        epoch_log: Option<PathBuf>,
    },
    /// JSONL {"text","causal","direction"} and/or a hypothesis table CSV.
    Linker {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    detector: PathBuf,
    #[arg(long)]
    tagger: PathBuf,
    #[arg(long)]
    linker: PathBuf,
    /// Keep candidates whose hypothesis probability exceeds this.
    #[arg(long, default_value_t = pipeline::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = ingest::MAX_WORDS)]
    max_words: usize,
    /// Write detector-rejected candidates here as JSONL.
    #[arg(long)]
    dump_rejected: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum EvalTarget {
    Detector,
    Tagger,
    LinkerCausality,
    LinkerDirection,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Protocol {
    Kfold,
    Holdout,
}

#[derive(Args, Debug)]
struct EvalArgs {
    target: EvalTarget,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Protocol::Kfold)]
    protocol: Protocol,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Tuning repeats for the linker targets.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0.75)]
    train_fraction: f64,
    /// Word vectors, required for the tagger.
    #[arg(long)]
    glove: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand, Debug)]
enum SynthCommand {
    /// Hypothesis and discussion sentences, JSONL {"text","label"}.
    Detector {
        #[arg(long, default_value_t = 643)]
        positives: usize,
        #[arg(long, default_value_t = 657)]
        negatives: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Tagged hypotheses, JSONL {"tokens","tags"}.
    Tagger {
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Link examples, JSONL {"text","causal","direction"}.
    Linker {
        #[arg(long, default_value_t = 600)]
        count: usize,
        /// Minimum examples per direction class.
        #[arg(long, default_value_t = 40)]
        min_per_class: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Pseudo word vectors covering the synthetic vocabulary plus the words
    /// of any --include files.
    Glove {
        #[arg(long, default_value_t = 50)]
        dim: usize,
        #[arg(long)]
        include: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(serde::Deserialize)]
struct DetectorRecord {
    text: String,
    label: u8,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    let seed = cli.seed.unwrap_or(42);
    match &cli.command {
        Command::Extract { input, output, max_words } => extract(cli, input, output, *max_words)?,
        Command::Train { model } => match model {
            TrainCommand::Detector { input, labels, output } => train_detector(cli, input, labels.as_deref(), output)?,
            TrainCommand::Tagger { input, table, glove, output, epoch_log } => {
                train_tagger(cli, input.as_deref(), table.as_deref(), glove, output, epoch_log.as_deref())?
            }
            TrainCommand::Linker { input, table, output } => {
                train_linker(cli, input.as_deref(), table.as_deref(), output)?
            }
        },
        Command::Run(args) => return run(cli, args),
        Command::Eval(args) => eval(cli, args)?,
        Command::Explain { detector, text, n_random } => explain(detector, text, *n_random, seed)?,
        Command::Synth { kind } => synthesize(kind, seed)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn usage_error(message: String) -> ! {
    Cli::command().error(clap::error::ErrorKind::ValueValidation, message).exit()
}

fn extract(cli: &Cli, input: &Path, output: &Path, max_words: usize) -> Result<()> {
    let mut records = Vec::new();
    let mut candidates = Vec::new();
    for (_, doc) in ingest::load_dir(input, cli.extractor.as_deref())? {
        let Ok(doc) = doc else { continue };
        let found = ingest::censor_by_length(
            ingest::extract_candidates(&ingest::segment_sentences(&doc)),
            max_words,
        );
        records.extend(found.iter().map(CandidateRecord::from));
        candidates.extend(found);
    }
    io::write_jsonl(output, &records)?;
    if let Ok(stats) = ingest::corpus_stats(&candidates) {
        info!(
            "{} candidates, mean {:.1} words, sd {:.1}",
            stats.sentence_count, stats.mean_words, stats.sd_words
        );
    } else {
        info!("no candidates found");
    }
    Ok(())
}

fn detector_config(cli: &Cli) -> Result<DetectorConfig> {
    let mut cfg: DetectorConfig = io::read_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn tagger_config(cli: &Cli) -> Result<TaggerConfig> {
    let mut cfg: TaggerConfig = io::read_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn linker_config(cli: &Cli) -> Result<LinkerConfig> {
    let mut cfg: LinkerConfig = io::read_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_detector_corpus(input: &Path, labels: Option<&Path>) -> Result<Vec<LabeledSentence>> {
    let pairs: Vec<(String, u8)> = match labels {
        Some(labels) => {
            let candidates: Vec<CandidateRecord> = io::read_jsonl(input)?;
            let labels = io::read_labels(labels)?;
            if labels.len() != candidates.len() {
                bail!("{} candidates but {} labels", candidates.len(), labels.len());
            }
            candidates.into_iter().map(|c| c.text).zip(labels).collect()
        }
        None => io::read_jsonl::<DetectorRecord>(input)?
            .into_iter()
            .map(|r| (r.text, r.label))
            .collect(),
    };
    pairs
        .into_iter()
        .enumerate()
        .map(|(i, (text, label))| {
            if label > 1 {
                bail!("record {}: label must be 0 or 1, got {label}", i + 1);
            }
            Ok(LabeledSentence { tokens: ingest::feature_tokens(&text), label })
        })
        .collect()
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn train_detector(cli: &Cli, input: &Path, labels: Option<&Path>, output: &Path) -> Result<()> {
    let cfg = detector_config(cli)?;
    let corpus = load_detector_corpus(input, labels)?;
    info!("detector config {}", serde_json::to_string(&cfg)?);
    let (model, losses) = detector::train_detector_logged(&corpus, &cfg)?;
    model.save(output)?;
    let metrics = detector::evaluate(&model, &corpus)?;
    print_json(&serde_json::json!({
        "config": cfg,
        "epoch_loss": losses,
        "training_metrics": metrics,
    }))
}

fn load_table_sequences(table: &Path) -> Result<Vec<TagSequence>> {
    let rows = read_table(table)?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            pipeline::gold_tags(&r.hypothesis, &r.variable_1, &r.variable_2).with_context(|| {
                format!("{}: row {}: variables are not token subsequences of the hypothesis", table.display(), i + 1)
            })
        })
        .collect()
}

fn read_table(table: &Path) -> Result<Vec<pipeline::HypothesisRecord>> {
    let file = std::fs::File::open(table).with_context(|| format!("cannot open {}", table.display()))?;
    pipeline::read_records_csv(file).with_context(|| format!("invalid table {}", table.display()))
}

fn train_tagger(
    cli: &Cli,
    input: Option<&Path>,
    table: Option<&Path>,
    glove: &Path,
    output: &Path,
    epoch_log: Option<&Path>,
) -> Result<()> {
    let cfg = tagger_config(cli)?;
    let mut data: Vec<TagSequence> = match input {
        Some(p) => io::read_jsonl(p)?,
        None => Vec::new(),
    };
    if let Some(t) = table {
        data.extend(load_table_sequences(t)?);
    }
    if data.is_empty() {
        bail!("no training data: give --input and/or --table");
    }
    let vectors = WordVectorTable::load(glove)?;
    info!("tagger config {}", serde_json::to_string(&cfg)?);
    let (model, log) = tagger::train_tagger_logged(&data, &vectors, &cfg)?;
    model.save(output)?;
    if let Some(path) = epoch_log {
        tagger::write_epoch_log(&log, io::create(path)?)?;
    }
    let preds = data.iter().map(|s| model.tag(&s.tokens)).collect::<hypo_core::Result<Vec<_>>>()?;
    let metrics = tagger::per_class_metrics(&preds, &data)?;
    print_json(&serde_json::json!({ "config": cfg, "training_metrics": metrics }))
}

fn load_link_examples(input: Option<&Path>, table: Option<&Path>) -> Result<Vec<LinkExample>> {
    let mut data: Vec<LinkExample> = match input {
        Some(p) => io::read_jsonl(p)?,
        None => Vec::new(),
    };
    if let Some(t) = table {
        data.extend(read_table(t)?.into_iter().map(|r| LinkExample {
            text: r.hypothesis,
            causal: r.causal_relationship,
            direction: r.direction,
        }));
    }
    if data.is_empty() {
        bail!("no training data: give --input and/or --table");
    }
    Ok(data)
}

fn train_linker(cli: &Cli, input: Option<&Path>, table: Option<&Path>, output: &Path) -> Result<()> {
    let cfg = linker_config(cli)?;
    let data = load_link_examples(input, table)?;
    info!("linker config {}", serde_json::to_string(&cfg)?);
    let (model, report) = linker::train_linker(&data, &cfg)?;
    model.save(output)?;
    print_json(&serde_json::json!({
        "config": cfg,
        "causality_reg_strength": model.causality.reg_strength,
        "direction_reg_strength": model.direction.reg_strength,
        "tuning": report,
    }))
}

fn run(cli: &Cli, args: &RunArgs) -> Result<ExitCode> {
    let models = Models {
        detector: DetectorModel::load(&args.detector)?,
        tagger: TaggerModel::load(&args.tagger)?,
        linker: LinkerModel::load(&args.linker)?,
    };
    if !args.input.is_dir() {
        bail!("input {} is not a directory", args.input.display());
    }
    let opts = RunOptions { threshold: args.threshold, max_words: args.max_words };
    let batch = pipeline::run_dir(&args.input, cli.extractor.as_deref(), &models, &opts)?;
    pipeline::write_records_csv(&batch.records, io::create(&args.output)?)?;
    if let Some(path) = &args.dump_rejected {
        io::write_jsonl(path, &batch.rejected)?;
    }
    info!(
        "{} hypotheses, {} rejected candidates, {} failed documents",
        batch.records.len(),
        batch.rejected.len(),
        batch.failed.len()
    );
    for (doc, err) in &batch.failed {
        eprintln!("failed: {doc}: {err}");
    }
    Ok(if batch.failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn report(rows: &[ReportRow], json: bool) -> Result<()> {
    if json {
        println!("{}", evalkit::report_json(rows)?);
    } else {
        evalkit::write_report_csv(rows, std::io::stdout().lock())?;
    }
    Ok(())
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    if args.folds < 2 {
        usage_error(format!("--folds must be at least 2, got {}", args.folds));
    }
    match args.target {
        EvalTarget::Detector => {
            let cfg = detector_config(cli)?;
            let corpus = load_detector_corpus(&args.input, None)?;
            let rows = match args.protocol {
                Protocol::Kfold => {
                    check_folds(args.folds, corpus.len());
                    let cv = detector::cross_validate_detector(&corpus, &cfg, args.folds)?;
                    vec![
                        ReportRow::new("fastText (fold mean)", "none", &cv.mean),
                        ReportRow::new("fastText (pooled)", "none", &cv.pooled),
                    ]
                }
                Protocol::Holdout => {
                    let m = detector::holdout_detector(&corpus, &cfg, args.train_fraction)?;
                    vec![ReportRow::new("fastText (holdout)", "none", &m)]
                }
            };
            report(&rows, args.json)
        }
        EvalTarget::Tagger => {
            let cfg = tagger_config(cli)?;
            let glove = args.glove.as_deref().context("--glove is required for the tagger")?;
            let data: Vec<TagSequence> = io::read_jsonl(&args.input)?;
            if args.protocol == Protocol::Kfold {
                info!("the tagger is evaluated on a holdout split only");
            }
            let (train, test) = evalkit::holdout_split(data.len(), args.train_fraction, cfg.seed)?;
            let train: Vec<TagSequence> = train.iter().map(|&i| data[i].clone()).collect();
            let test: Vec<TagSequence> = test.iter().map(|&i| data[i].clone()).collect();
            let vectors = WordVectorTable::load(glove)?;
            let model = tagger::train_tagger(&train, &vectors, &cfg)?;
            let preds = test.iter().map(|s| model.tag(&s.tokens)).collect::<hypo_core::Result<Vec<_>>>()?;
            let m = tagger::per_class_metrics(&preds, &test)?;
            let names = ["Non-node (0)", "Cause (1)", "Outcome (2)"];
            let mut rows: Vec<ReportRow> = m
                .per_class
                .iter()
                .map(|c| {
                    let metrics = evalkit::Metrics {
                        accuracy: m.accuracy,
                        precision: c.precision,
                        recall: c.recall,
                        f1: c.f1,
                        support: c.support,
                        per_class: None,
                    };
                    ReportRow::new(names[c.class], "lowercase", &metrics)
                })
                .collect();
            let overall = evalkit::Metrics {
                accuracy: m.accuracy,
                precision: m.overall.precision,
                recall: m.overall.recall,
                f1: m.overall.f1,
                support: m.overall.support,
                per_class: None,
            };
            rows.push(ReportRow::new("Overall (All Nodes)", "lowercase", &overall));
            report(&rows, args.json)
        }
        EvalTarget::LinkerCausality | EvalTarget::LinkerDirection => {
            let cfg = linker_config(cli)?;
            let data = load_link_examples(Some(&args.input), None)?;
            let prepared = linker::prepare(&data, &cfg)?;
            let (task, ys) = match args.target {
                EvalTarget::LinkerCausality => (Task::Causality, &prepared.causal),
                _ => (Task::Direction, &prepared.direction),
            };
            check_folds(args.folds, data.len());
            let tuned = linker::tune(
                &prepared.xs,
                ys,
                task,
                prepared.vocab.len(),
                &cfg.grid,
                args.folds,
                args.repeats,
                cfg.seed,
            )?;
            let mut rows: Vec<ReportRow> = tuned
                .points
                .iter()
                .map(|p| ReportRow::new(format!("Logistic Regression (C = {})", 1.0 / p.reg_strength), "stem", &p.metrics))
                .collect();
            rows.push(ReportRow::new(
                format!("Logistic Regression* (C = {})", 1.0 / tuned.best.reg_strength),
                "stem",
                &tuned.best.metrics,
            ));
            if task == Task::Direction {
                for p in &tuned.points {
                    if let Some(w) = p.weighted_f1 {
                        info!("reg_strength {}: weighted F1 {w:.4}", p.reg_strength);
                    }
                }
            }
            report(&rows, args.json)
        }
    }
}

fn check_folds(k: usize, n: usize) {
    if k > n {
        usage_error(format!("--folds {k} exceeds the {n} available records"));
    }
}

fn explain(detector: &Path, text: &str, n_random: Option<usize>, seed: u64) -> Result<()> {
    let model = DetectorModel::load(detector)?;
    let tokens = ingest::feature_tokens(text);
    if tokens.is_empty() {
        bail!("no feature tokens in {text:?}");
    }
    let n_random = n_random.unwrap_or(5 * tokens.len());
    let e = explainer::explain(&model, &tokens, n_random, seed)?;
    print_json(&serde_json::json!({
        "text": text,
        "tokens": e.ranked(),
        "intercept": e.intercept,
        "fidelity": e.fidelity,
        "prediction": e.prediction,
        "ridge_penalty": e.ridge_penalty,
        "kernel_width": e.kernel_width,
    }))
}

fn synthesize(kind: &SynthCommand, seed: u64) -> Result<()> {
    match kind {
        SynthCommand::Detector { positives, negatives, output } => {
            io::write_jsonl(output, &synth::detector_corpus(*positives, *negatives, seed))
        }
        SynthCommand::Tagger { count, output } => io::write_jsonl(output, &synth::tagger_corpus(*count, seed)),
        SynthCommand::Linker { count, min_per_class, output } => {
            io::write_jsonl(output, &synth::linker_corpus(*count, *min_per_class, seed))
        }
        SynthCommand::Glove { dim, include, output } => {
            let mut words = synth::vocabulary();
            for path in include {
                let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
                words.extend(
                    text.split(|c: char| c.is_whitespace() || c == ',' || c == '"')
                        .map(tagger::lookup_form)
                        .filter(|w| !w.is_empty()),
                );
            }
            let table = synth::word_vectors(&words, *dim, seed)?;
            let mut w = io::create(output)?;
            table.write(&mut w)?;
            std::io::Write::flush(&mut w)?;
            Ok(())
        }
    }
}
