mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use grit_core::analysis::{ablation_run, bucketed_scores, nested_subset, paired_bootstrap};
use grit_core::ceaf::{score_corpus, MatchMode};
use grit_core::io::{save_corpus, templates_to_string, write_atomic};
use grit_core::linearize::{
    build_source, delinearize, delinearize_lenient, dump_line, linearize, split_dump_line, PointerSequence,
    Unresolvable,
};
use grit_core::model::{checkpoint, train, GritModel, ModelConfig};
use grit_core::ree::resolve_template;
use grit_core::{Corpus, Document, Error, RoleId, Template};

use config::{ConfigParse, Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "grit", version, about = "Role-filler entity extraction: scoring, linearization, GRIT training and analysis")]
struct Cli {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for model init, shuffling, bootstrap and synthesis
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Source length cap including [CLS] and [SEP]
    #[arg(long, global = true)]
    max_source_len: Option<usize>,
    /// Separator probability multiplier at decode time (1.0 disables)
    #[arg(long, global = true)]
    sep_downweigh: Option<f64>,
    /// Bootstrap iterations
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// Output directory; results go to stdout when unset
    #[arg(long, global = true, env = "GRIT_OUTPUT_DIR")]
    out: Option<PathBuf>,
    /// More logging (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// CEAF-REE scores of predicted templates against gold
    Score(ScoreArgs),
    /// Gold templates to pointer-sequence dumps
    Linearize {
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Fail on entities that cannot be pointed at instead of skipping them
        #[arg(long)]
        strict: bool,
    },
    /// Pointer-sequence dumps back to templates
    Delinearize {
        #[arg(long)]
        docs: PathBuf,
        /// Dump file: one `doc_id<TAB>pointers` line per document
        #[arg(long)]
        seqs: PathBuf,
        /// Drop malformed pairs instead of failing
        #[arg(long)]
        lenient: bool,
    },
    /// Train a model; writes checkpoint.json and metrics.jsonl
    Train {
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, requires = "dev_gold")]
        dev_docs: Option<PathBuf>,
        #[arg(long, requires = "dev_docs")]
        dev_gold: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Decode documents with a trained checkpoint
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        docs: PathBuf,
        /// Allow end pointers before their begin pointer
        #[arg(long)]
        no_span_order: bool,
    },
    /// Bucketed, nested, significance and ablation analyses
    #[command(subcommand)]
    Analyze(Analysis),
    /// Generate the synthetic train/dev corpus
    Synth,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Documents, to validate offsets and resolve offset-free mentions
    #[arg(long)]
    docs: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Matching::Normalized)]
    matching: Matching,
    /// Include per-document counts in the JSON report
    #[arg(long)]
    per_document: bool,
}

#[derive(Subcommand, Debug)]
enum Analysis {
    /// Scores by average mentions per gold entity
    Buckets(ScoreArgs),
    /// Scores on documents with nested role fillers
    Nested {
        #[command(flatten)]
        score: ScoreArgs,
        #[arg(long, default_value = "PerpOrg")]
        inner: RoleId,
        #[arg(long, default_value = "PerpInd")]
        outer: RoleId,
    },
    /// Paired bootstrap significance of system A over system B
    Bootstrap {
        #[command(flatten)]
        score: ScoreArgs,
        /// Predictions of the second system
        #[arg(long)]
        pred_b: PathBuf,
    },
    /// Decoding-constraint ablations of one checkpoint
    Ablate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Matching {
    Normalized,
    Exact,
    Span,
}

impl From<Matching> for MatchMode {
    fn from(m: Matching) -> Self {
        match m {
            Matching::Normalized => MatchMode::Normalized,
            Matching::Exact => MatchMode::Exact,
            Matching::Span => MatchMode::Span,
        }
    }
}

const EXIT_USAGE: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigParse>().is_some() {
        return EXIT_PARSE;
    }
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_parse() => EXIT_PARSE,
        Some(Error::Io(_)) => EXIT_RUNTIME,
        Some(_) => EXIT_VALIDATION,
        None => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Writes results either into the output directory or to stdout.
struct Output {
    dir: Option<PathBuf>,
}

impl Output {
    fn emit(&self, name: &str, contents: &str) -> Result<()> {
        match &self.dir {
            Some(dir) => {
                let path = dir.join(name);
                write_atomic(&path, contents.as_bytes())?;
                log::info!("wrote {}", path.display());
            }
            None => print!("{contents}"),
        }
        Ok(())
    }

    /// Only written when an output directory is set.
    fn side_file(&self, name: &str, contents: &str) -> Result<()> {
        if let Some(dir) = &self.dir {
            write_atomic(dir.join(name), contents.as_bytes())?;
        }
        Ok(())
    }

    fn require_dir(&self, command: &str) -> Result<&Path> {
        match &self.dir {
            Some(d) => Ok(d),
            None => bail!(Error::Invalid(format!(
                "{command} needs an output directory (--out or GRIT_OUTPUT_DIR)"
            ))),
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        max_source_len: cli.max_source_len,
        sep_downweigh: cli.sep_downweigh,
        iterations: cli.iterations,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let out = Output { dir: cli.out };
    match cli.command {
        Command::Score(args) => cmd_score(&args, &out),
        Command::Linearize { docs, gold, strict } => cmd_linearize(&cfg, &docs, &gold, strict, &out),
        Command::Delinearize { docs, seqs, lenient } => cmd_delinearize(&cfg, &docs, &seqs, lenient, &out),
        Command::Train {
            docs,
            gold,
            dev_docs,
            dev_gold,
            epochs,
        } => {
            let mut cfg = cfg;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let dev = dev_docs.zip(dev_gold);
            cmd_train(&cfg, &docs, &gold, dev.as_ref().map(|(d, g)| (d.as_path(), g.as_path())), &out)
        }
        Command::Decode {
            checkpoint,
            docs,
            no_span_order,
        } => cmd_decode(cfg, &overrides, &checkpoint, &docs, no_span_order, &out),
        Command::Analyze(analysis) => cmd_analyze(cfg, &overrides, analysis, &out),
        Command::Synth => cmd_synth(&cfg, &out),
    }
}

/// Gold and predicted templates, both validated against `docs` when given.
fn load_scored(args: &ScoreArgs) -> Result<(BTreeMap<String, Template>, BTreeMap<String, Template>)> {
    load_pair(&args.gold, &args.pred, args.docs.as_deref())
}

fn load_pair(
    gold: &Path,
    pred: &Path,
    docs: Option<&Path>,
) -> Result<(BTreeMap<String, Template>, BTreeMap<String, Template>)> {
    let gold = read_templates(gold)?;
    let pred = read_templates(pred)?;
    match docs {
        None => Ok((gold, pred)),
        Some(path) => {
            let corpus = Corpus::new(read_documents(path)?, gold)?;
            let gold = corpus
                .documents
                .iter()
                .map(|d| (d.doc_id.clone(), corpus.gold_for(&d.doc_id)))
                .collect();
            Ok((gold, resolve_all(&corpus.documents, pred)?))
        }
    }
}

fn resolve_all(docs: &[Document], mut templates: BTreeMap<String, Template>) -> Result<BTreeMap<String, Template>> {
    let index: BTreeMap<&str, &Document> = docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    for (id, t) in templates.iter_mut() {
        let doc = index.get(id.as_str()).ok_or_else(|| Error::UnknownPrediction(id.clone()))?;
        resolve_template(doc, t)?;
    }
    Ok(templates)
}

fn read_documents(path: &Path) -> Result<Vec<Document>> {
    grit_core::io::read_documents(path).with_context(|| format!("reading documents from {}", path.display()))
}

fn read_templates(path: &Path) -> Result<BTreeMap<String, Template>> {
    grit_core::io::read_templates(path).with_context(|| format!("reading templates from {}", path.display()))
}

fn json_text(value: &serde_json::Value) -> String {
    serde_json::to_string_pretty(value).expect("json serializes") + "\n"
}

fn cmd_score(args: &ScoreArgs, out: &Output) -> Result<()> {
    let (gold, pred) = load_scored(args)?;
    let report = score_corpus(&gold, &pred, args.matching.into())?;
    print!("{}", report.table());
    out.side_file("score.json", &json_text(&report.to_json(args.per_document)))
}

fn load_corpus_with_len(cfg: &RunConfig, docs: &Path, gold: &Path) -> Result<(Corpus, usize)> {
    let corpus = Corpus::new(read_documents(docs)?, read_templates(gold)?)?;
    // vocab_size is only known once the vocabulary is built
    ModelConfig { vocab_size: 1, ..cfg.model.clone() }.validate()?;
    Ok((corpus, cfg.model.max_source_len))
}

fn cmd_linearize(cfg: &RunConfig, docs: &Path, gold: &Path, strict: bool, out: &Output) -> Result<()> {
    let (corpus, max_len) = load_corpus_with_len(cfg, docs, gold)?;
    let policy = if strict { Unresolvable::Fail } else { Unresolvable::Skip };
    let mut text = String::new();
    for doc in &corpus.documents {
        let src = build_source(doc, max_len);
        let lin = linearize(&corpus.gold_for(&doc.doc_id), &src, policy)?;
        text.push_str(&dump_line(&doc.doc_id, &lin.sequence));
        text.push('\n');
    }
    out.emit("targets.txt", &text)
}

fn cmd_delinearize(cfg: &RunConfig, docs: &Path, seqs: &Path, lenient: bool, out: &Output) -> Result<()> {
    let docs = read_documents(docs)?;
    let index: BTreeMap<&str, &Document> = docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let text = std::fs::read_to_string(seqs).with_context(|| format!("reading {}", seqs.display()))?;
    let mut templates = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (doc_id, pointers) = split_dump_line(line)?;
        let doc = index
            .get(doc_id)
            .ok_or_else(|| Error::DanglingDocId(doc_id.to_string()))?;
        let src = build_source(doc, cfg.model.max_source_len);
        let seq = PointerSequence::from_dump(pointers, src.sep_index())?;
        let mut template = if lenient {
            let (t, dropped) = delinearize_lenient(&seq, &src);
            if dropped.total() > 0 {
                log::warn!("{doc_id}: dropped {} malformed pairs", dropped.total());
            }
            t
        } else {
            delinearize(&seq, &src)?
        };
        template.doc_id = doc_id.to_string();
        templates.push(template);
    }
    out.emit("templates.jsonl", &templates_to_string(&templates))
}

fn cmd_train(cfg: &RunConfig, docs: &Path, gold: &Path, dev: Option<(&Path, &Path)>, out: &Output) -> Result<()> {
    let dir = out.require_dir("train")?;
    let (corpus, _) = load_corpus_with_len(cfg, docs, gold)?;
    let dev = match dev {
        Some((d, g)) => Some(Corpus::new(read_documents(d)?, read_templates(g)?)?),
        None => None,
    };
    out.side_file("config.toml", &cfg.to_toml())?;
    let metrics_path = dir.join("metrics.jsonl");
    let mut metrics = String::new();
    let mut write_err = None;
    let outcome = train(&corpus, dev.as_ref(), cfg.model.clone(), &cfg.train, |record| {
        metrics.push_str(&serde_json::to_string(record).expect("record serializes"));
        metrics.push('\n');
        if let Err(e) = write_atomic(&metrics_path, metrics.as_bytes()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    checkpoint::save(&outcome.model, dir.join("checkpoint.json"))?;
    // the echoed config now carries the vocabulary size
    let mut effective = cfg.clone();
    effective.model = outcome.model.config.clone();
    out.side_file("config.toml", &effective.to_toml())?;
    let best = &outcome.history[outcome.best_epoch - 1];
    println!(
        "trained {} epochs; kept epoch {} (loss {:.4}{})",
        outcome.history.len(),
        outcome.best_epoch,
        best.loss,
        best.dev_f1.map(|f| format!(", dev F1 {f:.4}")).unwrap_or_default()
    );
    Ok(())
}

/// Load a checkpoint and reconcile it with command-line overrides.
fn load_model(path: &Path, overrides: &Overrides) -> Result<GritModel> {
    let model = checkpoint::load(path)?;
    if let Some(n) = overrides.max_source_len {
        if n != model.config.max_source_len {
            bail!(Error::Checkpoint(format!(
                "checkpoint was trained with max_source_len {} but {n} was requested",
                model.config.max_source_len
            )));
        }
    }
    Ok(model)
}

fn model_decode_config(mut cfg: RunConfig, model: &GritModel, overrides: &Overrides) -> RunConfig {
    cfg.model = model.config.clone();
    if let Some(f) = overrides.sep_downweigh {
        cfg.model.sep_downweigh_factor = f;
    }
    cfg
}

fn cmd_decode(
    cfg: RunConfig,
    overrides: &Overrides,
    checkpoint_path: &Path,
    docs: &Path,
    no_span_order: bool,
    out: &Output,
) -> Result<()> {
    let model = load_model(checkpoint_path, overrides)?;
    let mut cfg = model_decode_config(cfg, &model, overrides);
    if no_span_order {
        cfg.decode.enforce_span_order = false;
    }
    let mut opts = cfg.decode_options();
    if !(opts.sep_downweigh > 0.0 && opts.sep_downweigh <= 1.0) {
        bail!(Error::Config(format!("sep_downweigh {} outside (0, 1]", opts.sep_downweigh)));
    }
    opts.trace = false;
    let docs = read_documents(docs)?;
    let decoded = model.predict(&docs, &opts)?;
    let dropped: usize = decoded.iter().map(|d| d.dropped.total()).sum();
    let truncated = decoded.iter().filter(|d| d.output.truncated).count();
    if dropped > 0 || truncated > 0 {
        log::warn!("dropped {dropped} malformed pairs; {truncated} documents hit the step cap");
    }
    out.side_file("config.toml", &cfg.to_toml())?;
    let templates: Vec<&Template> = decoded.iter().map(|d| &d.template).collect();
    out.emit("predictions.jsonl", &templates_to_string(templates))
}

fn cmd_analyze(cfg: RunConfig, overrides: &Overrides, analysis: Analysis, out: &Output) -> Result<()> {
    match analysis {
        Analysis::Buckets(args) => {
            let (gold, pred) = load_scored(&args)?;
            let report = score_corpus(&gold, &pred, args.matching.into())?;
            let buckets = bucketed_scores(&gold, &report);
            print!("{}", buckets.table());
            out.side_file("buckets.json", &json_text(&buckets.to_json()))
        }
        Analysis::Nested { score, inner, outer } => {
            let (gold, pred) = load_scored(&score)?;
            let ids = nested_subset(&gold, inner, outer)?;
            let report = score_corpus(&gold, &pred, score.matching.into())?.restrict(ids.iter().map(String::as_str));
            println!("{} of {} documents nest {inner} in {outer}", ids.len(), gold.len());
            print!("{}", report.table());
            let json = serde_json::json!({
                "inner": inner.as_str(),
                "outer": outer.as_str(),
                "doc_ids": ids,
                "report": report.to_json(false),
            });
            out.side_file("nested.json", &json_text(&json))
        }
        Analysis::Bootstrap { score, pred_b } => {
            let (gold, pred_a) = load_scored(&score)?;
            let (_, pred_b) = load_pair(&score.gold, &pred_b, score.docs.as_deref())?;
            let result = paired_bootstrap(&gold, &pred_a, &pred_b, cfg.bootstrap.iterations, cfg.bootstrap.seed)?;
            print!("{}", result.table());
            out.side_file("config.toml", &cfg.to_toml())?;
            out.side_file("bootstrap.json", &json_text(&serde_json::to_value(&result)?))
        }
        Analysis::Ablate { checkpoint, docs, gold } => {
            let model = load_model(&checkpoint, overrides)?;
            let cfg = model_decode_config(cfg, &model, overrides);
            let corpus = Corpus::new(read_documents(&docs)?, read_templates(&gold)?)?;
            let report = ablation_run(&model, &corpus, &cfg.decode_options())?;
            print!("{}", report.table());
            out.side_file("config.toml", &cfg.to_toml())?;
            out.side_file("ablation.json", &json_text(&serde_json::to_value(&report)?))
        }
    }
}

fn cmd_synth(cfg: &RunConfig, out: &Output) -> Result<()> {
    let dir = out.require_dir("synth")?;
    let corpus = grit_core::synth::generate(&cfg.synth)?;
    save_corpus(&corpus.train, dir.join("train.docs.jsonl"), dir.join("train.templates.jsonl"))?;
    save_corpus(&corpus.dev, dir.join("dev.docs.jsonl"), dir.join("dev.templates.jsonl"))?;
    out.side_file("config.toml", &cfg.to_toml())?;
    println!(
        "wrote {} train and {} dev documents to {}",
        corpus.train.len(),
        corpus.dev.len(),
        dir.display()
    );
    Ok(())
}
