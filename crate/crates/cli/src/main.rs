//! `uner`: data preparation, training, prediction, evaluation and the
//! experiment drivers behind one binary.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

mod experiment;
mod inputs;
mod manifest;

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use unified_ner::baselines::{default_priority, mtm_finetune, predict_vote_sentences, train_mtm, train_stm};
use unified_ner::checkpoint::Checkpoint;
use unified_ner::corpus::{mention_counts, partialize, sample_subset, write_conll, write_predictions, Corpus, PartitionPlan};
use unified_ner::eval::{format_scores, mcnemar, mention_prf, overlap_matrix, write_matrix_csv};
use unified_ner::experiment::Variant;
use unified_ner::model::ModelKind;
use unified_ner::synthetic::{generate_synthetic, SyntheticSpec};
use unified_ner::tagspace::{EntityType, Label};
use unified_ner::training::{fine_tune, predict_sentences, train, EpochRecord, TrainConfig, TrainOutcome, DISCOUNT_GRID};
use unified_ner::{par, Error as CoreError};

use inputs::{corpus_id, load_all, CorpusArg};
use manifest::{beside, write_atomic, Recorder};

#[derive(Parser)]
#[command(name = "uner", version, about = "Unified NER from partially annotated corpora")]
struct Cli {
    /// Worker threads; 1 gives a strictly sequential schedule.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a fully annotated corpus into single-schema parts.
    Partialize(PartializeArgs),
    /// Train a unified, multi-task or single-task model.
    Train(TrainArgs),
    /// Continue training a checkpoint on a fully annotated sample.
    FineTune(FineTuneArgs),
    /// Tag a CoNLL file with a checkpoint.
    Predict(PredictArgs),
    /// Mention-level precision, recall and F1.
    Evaluate(EvaluateArgs),
    /// McNemar test between two prediction files.
    Mcnemar(McnemarArgs),
    /// Pairwise mention overlap coefficients as CSV.
    Overlap(OverlapArgs),
    /// Train every (M, M') pair on a grid and report dev F1.
    Grid(GridArgs),
    /// Run the variant × seed × budget protocol.
    Experiment(ExperimentArgs),
    /// Generate a synthetic corpus with planted lexicons.
    Synth(SynthArgs),
    /// Draw a seeded subset of sentences.
    Sample(SampleArgs),
}

/// Training hyperparameter overrides shared by train, fine-tune and grid.
#[derive(Args, Clone, Default)]
struct TrainFlags {
    /// TOML training configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

impl TrainFlags {
    fn resolve(&self, base: TrainConfig, rec: &mut Recorder) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                rec.input(path);
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => base,
        };
        if let Some(x) = self.seed {
            cfg.seed = x;
        }
        if let Some(x) = self.epochs {
            cfg.max_epochs = x;
        }
        if let Some(x) = self.learning_rate {
            cfg.learning_rate = x;
        }
        if let Some(x) = self.batch_size {
            cfg.batch_size = x;
        }
        if let Some(x) = self.patience {
            cfg.patience = x;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct PartializeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    parts: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum VariantFlag {
    #[value(name = "unified-00")]
    Unified00,
    #[value(name = "unified-01")]
    Unified01,
    #[value(name = "unified-11")]
    Unified11,
    Mtm,
    Stm,
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus as PATH[@TYPE,...]; repeat for several corpora.
    #[arg(long = "train", required = true)]
    train: Vec<CorpusArg>,
    /// Dev corpus as PATH[@TYPE,...]; for mtm, paired with --train by position.
    #[arg(long = "dev")]
    dev: Vec<CorpusArg>,
    /// Named model variant.
    #[arg(long, value_enum, conflicts_with_all = ["m", "m_prime"])]
    variant: Option<VariantFlag>,
    #[arg(long = "M", id = "m")]
    m: Option<f64>,
    #[arg(long = "M-prime", id = "m_prime")]
    m_prime: Option<f64>,
    #[command(flatten)]
    flags: TrainFlags,
    /// Checkpoint output.
    #[arg(long)]
    out: PathBuf,
    /// JSON-lines per-epoch metrics output.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct FineTuneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Fully annotated fine-tuning corpus.
    #[arg(long = "train")]
    train: CorpusArg,
    #[arg(long = "dev")]
    dev: Vec<CorpusArg>,
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum Combine {
    Viterbi,
    Vote,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// How multi-head output is combined (unified models always use Viterbi).
    #[arg(long, value_enum)]
    combine: Option<Combine>,
    /// Head names in tie-break order, comma separated.
    #[arg(long, value_delimiter = ',')]
    priority: Vec<String>,
    /// Keep only these types in the output, comma separated.
    #[arg(long, value_delimiter = ',')]
    types: Vec<EntityType>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Score only these types, comma separated.
    #[arg(long, value_delimiter = ',')]
    types: Vec<EntityType>,
    /// JSON scores output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct McnemarArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OverlapArgs {
    /// Two or more corpora.
    #[arg(long = "corpus", required = true, num_args = 1..)]
    corpora: Vec<CorpusArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long = "train", required = true)]
    train: Vec<CorpusArg>,
    #[arg(long = "dev", required = true)]
    dev: Vec<CorpusArg>,
    /// Values tried for both M and M', comma separated.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    #[command(flatten)]
    flags: TrainFlags,
    /// CSV output: M,M_prime,epoch,dev_f1.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML with [plan] and one of [synthetic] or [corpora].
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Skip cells already recorded in out_dir/progress.json.
    #[arg(long)]
    resume: bool,
    /// Override the plan's seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Override the plan's budgets, comma separated.
    #[arg(long, value_delimiter = ',')]
    budgets: Vec<usize>,
    /// Override the plan's variants, comma separated.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<Variant>,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML generator spec; defaults otherwise.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    sentences: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Errors that map to exit code 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let jobs = cli.jobs;
    match par::with_threads(jobs, move || run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Partialize(a) => cmd_partialize(a),
        Command::Train(a) => cmd_train(a),
        Command::FineTune(a) => cmd_fine_tune(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Mcnemar(a) => cmd_mcnemar(a),
        Command::Overlap(a) => cmd_overlap(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Sample(a) => cmd_sample(a),
    }
}

fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_conll(corpus, &mut buf)?;
    write_atomic(path, &buf)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(value)?;
    json.push(b'\n');
    write_atomic(path, &json)
}

fn cmd_partialize(a: PartializeArgs) -> Result<()> {
    if a.parts == 0 {
        return usage("--parts must be at least 1");
    }
    let mut rec = Recorder::new("partialize");
    rec.input(&a.input);
    rec.seed(a.seed);
    let corpus = CorpusArg::plain(&a.input).load()?;
    let parts = partialize(&corpus, &PartitionPlan::RandomByType { parts: a.parts }, a.seed).map_err(|e| match e {
        CoreError::TooManyParts { .. } => Usage(e.to_string()).into(),
        e => anyhow::Error::from(e),
    })?;
    fs::create_dir_all(&a.out_dir)?;
    #[derive(Serialize)]
    struct PartSummary {
        file: String,
        types: Vec<String>,
        sentences: usize,
        mentions: std::collections::BTreeMap<String, usize>,
    }
    let stem = corpus_id(&a.input);
    let mut summary = Vec::new();
    for (j, part) in parts.iter().enumerate() {
        let name = format!("{stem}.part{j}.conll");
        let path = a.out_dir.join(&name);
        write_corpus(part, &path)?;
        rec.output(&path);
        summary.push(PartSummary {
            file: name,
            types: part.schema.annotated_types.iter().map(|t| t.to_string()).collect(),
            sentences: part.len(),
            mentions: mention_counts(part),
        });
    }
    let summary_path = a.out_dir.join("summary.json");
    write_json(&summary, &summary_path)?;
    rec.output(&summary_path);
    rec.config(&serde_json::json!({ "parts": a.parts }))?;
    rec.write(&a.out_dir.join("manifest.json"))
}

fn write_metrics(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for r in history {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

fn finish_training(out: TrainOutcome, path: &Path, metrics: Option<&Path>, mut rec: Recorder) -> Result<()> {
    write_atomic(path, &out.checkpoint.to_bytes()?)?;
    rec.output(path);
    if let Some(m) = metrics {
        write_metrics(&out.history, m)?;
        rec.output(m);
    }
    rec.seed(out.checkpoint.config.seed);
    rec.config(&out.checkpoint.config)?;
    eprintln!(
        "kept epoch {} (dev F1 {})",
        out.checkpoint.epoch,
        out.checkpoint.dev_f1.map_or("n/a".into(), |f| format!("{f:.4}"))
    );
    rec.write(&beside(path))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut rec = Recorder::new("train");
    let mut cfg = a.flags.resolve(TrainConfig::default(), &mut rec)?;
    let dev_args: Vec<CorpusArg> = if a.dev.is_empty() {
        cfg.dev.iter().map(|s| s.parse().map_err(|e: String| anyhow::anyhow!(e))).collect::<Result<_>>()?
    } else {
        a.dev.clone()
    };
    match a.variant {
        Some(VariantFlag::Unified00) => (cfg.m, cfg.m_prime) = (0.0, 0.0),
        Some(VariantFlag::Unified01) => (cfg.m, cfg.m_prime) = (0.0, 1.0),
        Some(VariantFlag::Unified11) => (cfg.m, cfg.m_prime) = (1.0, 1.0),
        _ => {}
    }
    if let Some(m) = a.m {
        cfg.m = m;
    }
    if let Some(m) = a.m_prime {
        cfg.m_prime = m;
    }
    cfg.dev = dev_args.iter().map(|d| d.path.display().to_string()).collect();
    if let Err(e) = cfg.validate() {
        return usage(e.to_string());
    }
    for c in a.train.iter().chain(&dev_args) {
        rec.input(&c.path);
    }
    let corpora = load_all(&a.train)?;
    let dev = load_all(&dev_args)?;
    let out = match a.variant {
        Some(VariantFlag::Mtm) => {
            if !dev.is_empty() && dev.len() != corpora.len() {
                return usage("mtm needs one --dev per --train, in the same order");
            }
            train_mtm(&corpora, &dev, &cfg)?
        }
        Some(VariantFlag::Stm) => {
            if corpora.len() != 1 || dev.len() > 1 {
                return usage("stm takes exactly one --train and at most one --dev");
            }
            train_stm(&corpora[0], dev.first(), &cfg)?
        }
        _ => train(&corpora, &dev, &cfg)?,
    };
    finish_training(out, &a.out, a.metrics.as_deref(), rec)
}

fn cmd_fine_tune(a: FineTuneArgs) -> Result<()> {
    let mut rec = Recorder::new("fine-tune");
    rec.input(&a.checkpoint);
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let mut cfg = a.flags.resolve(ck.config.clone(), &mut rec)?;
    cfg.dev = a.dev.iter().map(|d| d.path.display().to_string()).collect();
    if let Err(e) = cfg.validate() {
        return usage(e.to_string());
    }
    rec.input(&a.train.path);
    for d in &a.dev {
        rec.input(&d.path);
    }
    let corpus = a.train.load()?;
    let dev = load_all(&a.dev)?;
    let out = match ck.model.kind {
        ModelKind::Unified => fine_tune(&ck, &corpus, &dev, &cfg)?,
        ModelKind::MultiHead => mtm_finetune(&ck, &corpus, &dev, &cfg)?,
    };
    finish_training(out, &a.out, a.metrics.as_deref(), rec)
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let mut rec = Recorder::new("predict");
    rec.input(&a.checkpoint);
    rec.input(&a.input);
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let model = &ck.model;
    let known: BTreeSet<&EntityType> = model.heads.iter().flat_map(|h| h.space.types()).collect();
    for t in &a.types {
        if !known.contains(t) {
            bail!("type {t} is not in the checkpoint's tag space");
        }
    }
    let corpus = CorpusArg::plain(&a.input).load()?;
    let mut pred = match (model.kind, a.combine) {
        (ModelKind::Unified, Some(Combine::Vote)) => return usage("--combine vote needs a multi-head checkpoint"),
        (ModelKind::Unified, _) => predict_sentences(model, &corpus.sentences)?,
        (ModelKind::MultiHead, Some(Combine::Viterbi)) => {
            return usage("a multi-head checkpoint has no single Viterbi decode; use --combine vote")
        }
        (ModelKind::MultiHead, _) => {
            let priority = if a.priority.is_empty() {
                default_priority(model)
            } else {
                for p in &a.priority {
                    if !model.heads.iter().any(|h| &h.name == p) {
                        return usage(format!("--priority names unknown head {p}"));
                    }
                }
                a.priority.clone()
            };
            predict_vote_sentences(model, &corpus.sentences, &priority)?
        }
    };
    if !a.types.is_empty() {
        let keep: BTreeSet<&EntityType> = a.types.iter().collect();
        for labels in &mut pred {
            let spans: Vec<_> = unified_ner::corpus::spans(labels)
                .into_iter()
                .filter(|s| keep.contains(&s.entity_type))
                .collect();
            *labels = unified_ner::corpus::paint(labels.len(), &spans);
        }
    }
    let mut buf = Vec::new();
    write_predictions(&corpus.sentences, &pred, &mut buf)?;
    write_atomic(&a.out, &buf)?;
    rec.output(&a.out);
    rec.config(&serde_json::json!({
        "combine": matches!(model.kind, ModelKind::MultiHead).then_some("vote"),
        "priority": a.priority,
        "types": a.types,
    }))?;
    rec.write(&beside(&a.out))
}

fn labels_of(path: &Path) -> Result<Corpus> {
    CorpusArg::plain(path).load()
}

fn predictions(c: &Corpus) -> Vec<Vec<Label>> {
    c.sentences.iter().map(|s| s.gold.clone()).collect()
}

fn check_tokens(gold: &Corpus, pred: &Corpus) -> Result<()> {
    if gold.len() != pred.len() {
        bail!("gold has {} sentences, predictions {}", gold.len(), pred.len());
    }
    for (i, (g, p)) in gold.sentences.iter().zip(&pred.sentences).enumerate() {
        if !g.words().eq(p.words()) {
            bail!("sentence {} differs in tokens between gold and predictions", i + 1);
        }
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let mut rec = Recorder::new("evaluate");
    rec.input(&a.gold);
    rec.input(&a.pred);
    let gold = labels_of(&a.gold)?;
    let pred = labels_of(&a.pred)?;
    check_tokens(&gold, &pred)?;
    let filter: BTreeSet<EntityType> = a.types.iter().cloned().collect();
    let scores = mention_prf(&gold.sentences, &predictions(&pred), (!filter.is_empty()).then_some(&filter))?;
    print!("{}", format_scores(&scores));
    if let Some(out) = &a.out {
        write_json(&scores, out)?;
        rec.output(out);
        rec.config(&serde_json::json!({ "types": a.types }))?;
        rec.write(&beside(out))?;
    }
    Ok(())
}

fn cmd_mcnemar(a: McnemarArgs) -> Result<()> {
    let mut rec = Recorder::new("mcnemar");
    for p in [&a.gold, &a.a, &a.b] {
        rec.input(p);
    }
    let gold = labels_of(&a.gold)?;
    let pa = labels_of(&a.a)?;
    let pb = labels_of(&a.b)?;
    check_tokens(&gold, &pa)?;
    check_tokens(&gold, &pb)?;
    let test = mcnemar(&gold.sentences, &predictions(&pa), &predictions(&pb))?;
    println!(
        "b={} c={} chi2={:.4} significant@0.01={}",
        test.b, test.c, test.chi_square, test.significant_at_001
    );
    if let Some(out) = &a.out {
        write_json(&test, out)?;
        rec.output(out);
        rec.write(&beside(out))?;
    }
    Ok(())
}

fn cmd_overlap(a: OverlapArgs) -> Result<()> {
    if a.corpora.len() < 2 {
        return usage("overlap needs at least two --corpus");
    }
    let mut rec = Recorder::new("overlap");
    for c in &a.corpora {
        rec.input(&c.path);
    }
    let corpora = load_all(&a.corpora)?;
    let matrix = overlap_matrix(&corpora)?;
    let ids: Vec<String> = corpora.iter().map(|c| c.id.clone()).collect();
    let mut buf = Vec::new();
    write_matrix_csv(&ids, &matrix, &mut buf)?;
    match &a.out {
        Some(out) => {
            write_atomic(out, &buf)?;
            rec.output(out);
            rec.write(&beside(out))?;
        }
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(())
}

fn cmd_grid(a: GridArgs) -> Result<()> {
    let mut rec = Recorder::new("grid");
    let base = a.flags.resolve(TrainConfig::default(), &mut rec)?;
    let values = if a.values.is_empty() { DISCOUNT_GRID.to_vec() } else { a.values.clone() };
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return usage(format!("grid value {v} is outside [0, 1]"));
    }
    for c in a.train.iter().chain(&a.dev) {
        rec.input(&c.path);
    }
    let corpora = load_all(&a.train)?;
    let dev = load_all(&a.dev)?;
    let pairs: Vec<(f64, f64)> = values.iter().flat_map(|&m| values.iter().map(move |&mp| (m, mp))).collect();
    let results = par::map(&pairs, |&(m, m_prime)| {
        let cfg = TrainConfig {
            m,
            m_prime,
            ..base.clone()
        };
        train(&corpora, &dev, &cfg).map(|o| (o.checkpoint.epoch, o.checkpoint.dev_f1.unwrap_or(f64::NAN)))
    });
    let mut csv = String::from("M,M_prime,epoch,dev_f1\n");
    let mut best: Option<(f64, f64, f64)> = None;
    for (&(m, mp), r) in pairs.iter().zip(results) {
        let (epoch, f1) = r?;
        csv.push_str(&format!("{m},{mp},{epoch},{f1:.6}\n"));
        if best.is_none_or(|b| f1 > b.2) {
            best = Some((m, mp, f1));
        }
    }
    write_atomic(&a.out, csv.as_bytes())?;
    if let Some((m, mp, f1)) = best {
        eprintln!("best: M={m} M'={mp} dev F1 {f1:.4}");
    }
    rec.output(&a.out);
    rec.seed(base.seed);
    rec.config(&serde_json::json!({ "values": values, "train": base }))?;
    rec.write(&beside(&a.out))
}

fn cmd_experiment(a: ExperimentArgs) -> Result<()> {
    let mut rec = Recorder::new("experiment");
    rec.input(&a.config);
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut config: experiment::ExperimentConfig =
        toml::from_str(&text).with_context(|| format!("parsing {}", a.config.display()))?;
    if !a.seeds.is_empty() {
        config.plan.seeds = a.seeds.clone();
    }
    if !a.budgets.is_empty() {
        config.plan.budgets = a.budgets.clone();
    }
    if !a.variants.is_empty() {
        config.plan.variants = a.variants.clone();
    }
    fs::create_dir_all(&a.out_dir)?;
    experiment::run(&config, &a.out_dir, a.resume, rec)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut rec = Recorder::new("synth");
    let mut spec = match &a.spec {
        Some(p) => {
            rec.input(p);
            toml::from_str(&fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(n) = a.sentences {
        spec.sentences = n;
    }
    let corpus = generate_synthetic(&spec, a.seed)?.with_id(corpus_id(&a.out));
    write_corpus(&corpus, &a.out)?;
    rec.output(&a.out);
    rec.seed(a.seed);
    rec.config(&spec)?;
    rec.write(&beside(&a.out))
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let mut rec = Recorder::new("sample");
    rec.input(&a.input);
    let corpus = CorpusArg::plain(&a.input).load()?;
    let subset = sample_subset(&corpus, a.n, a.seed)?;
    write_corpus(&subset, &a.out)?;
    rec.output(&a.out);
    rec.seed(a.seed);
    rec.config(&serde_json::json!({ "n": a.n }))?;
    rec.write(&beside(&a.out))
}
