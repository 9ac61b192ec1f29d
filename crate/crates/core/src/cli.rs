//! `coipo` command line: perturb, build-dataset, train, eval and report.
//!
//! Exit codes: 0 success, 1 runtime error, 2 bad flags or config, 3
//! non-finite loss during training.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::eval::{evaluate_cases, read_cases_jsonl, render_report, write_cases_jsonl, EvalReport, DEFAULT_THRESHOLDS};
use crate::loss::LossConfig;
use crate::model::{encode_triple, train, write_metrics_jsonl, ModelConfig, ModelError, OptimizerState, ToyLm};
use crate::pairs::{
    build_pairs, load_templates, make_triples, parse_records_jsonl, parse_templates, read_jsonl, read_records_jsonl,
    write_jsonl, TaskTemplate,
};
use crate::perturb::{CleanPrompt, PerturbationConfig, PerturbationKind, Perturber, RepRange};
use crate::rng::SeededRng;
use crate::suite::{bounded_vocab, split_records, vocab_corpus, SUITE_RECORDS_JSONL, SUITE_TEMPLATES_JSON};

pub const SEED_ENV: &str = "COIPO_SEED";
pub const DEFAULT_SEED: u64 = 42;

const SEED_HELP: &str = "Seed; precedence: this flag, then the config file, then COIPO_SEED, then 42";

/// Shared run configuration, read from a JSON file with `--config`. Command
/// flags override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub templates: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub eval_set: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub perturbation: PerturbationConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub pairs: usize,
    pub eval_per_task: usize,
    pub vocab_min_count: usize,
    pub vocab_limit: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            templates: None,
            records: None,
            lexicon: None,
            dataset: None,
            eval_set: None,
            checkpoint: None,
            metrics: None,
            report: None,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            perturbation: PerturbationConfig::default(),
            batch_size: 64,
            epochs: 1,
            learning_rate: 1e-4,
            pairs: 2000,
            eval_per_task: 24,
            vocab_min_count: 2,
            vocab_limit: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    fn from_flag(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

/// Flag seed, then config seed, then `COIPO_SEED`, then 42.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>, env: Option<&str>) -> Result<u64, CliError> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        None => Ok(DEFAULT_SEED),
    }
}

fn seed_from(flag: Option<u64>, config: &RunConfig) -> Result<u64, CliError> {
    resolve_seed(flag, config.seed, std::env::var(SEED_ENV).ok().as_deref())
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(Box<dyn std::error::Error + Send + Sync>),
    #[error(transparent)]
    NonFinite(ModelError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Usage(_) => 2,
            CliError::NonFinite(_) => 3,
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(Box::new(e))
            }
        }
    )*};
}

runtime_from!(
    crate::pairs::PairError,
    crate::perturb::PerturbError,
    crate::eval::EvalError,
    crate::suite::SuiteError,
    std::io::Error,
    serde_json::Error
);

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFiniteLoss { .. } => CliError::NonFinite(e),
            e => CliError::Runtime(Box::new(e)),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()).into())
}

#[derive(Debug, Parser)]
#[command(
    name = "coipo",
    version,
    about = "Prompt-robustness toolkit: noise, paired data, training and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Perturb prompts (one per line) and write PerturbedPrompt JSONL.
    Perturb(PerturbArgs),
    /// Render and perturb source records into PairedExample JSONL.
    BuildDataset(BuildArgs),
    /// Train the toy LM on a PairedExample JSONL file.
    Train(TrainArgs),
    /// Evaluate a checkpoint on an eval set and write an EvalReport.
    Eval(EvalArgs),
    /// Merge EvalReports into an accuracy/diff grid (CSV).
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Deepwordbug,
    Textfooler,
    Checklist,
    Stresstest,
    Random,
}

impl KindArg {
    fn kind(self) -> Option<PerturbationKind> {
        match self {
            KindArg::Deepwordbug => Some(PerturbationKind::DeepWordBug),
            KindArg::Textfooler => Some(PerturbationKind::TextFooler),
            KindArg::Checklist => Some(PerturbationKind::CheckList),
            KindArg::Stresstest => Some(PerturbationKind::StressTest),
            KindArg::Random => None,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    /// Cross-entropy on noisy prompts only.
    Sft,
    /// Cross-entropy plus the contrastive KL objective.
    Coipo,
    /// Cross-entropy plus the hidden-state contrastive term.
    Cl,
    /// Cross-entropy plus the direct log-probability preference term.
    Invdpo,
}

impl MethodArg {
    fn loss(self, base: &LossConfig) -> LossConfig {
        let preset = match self {
            MethodArg::Sft => LossConfig::sft(),
            MethodArg::Coipo => LossConfig::default(),
            MethodArg::Cl => LossConfig::cl(),
            MethodArg::Invdpo => LossConfig::invdpo(),
        };
        LossConfig {
            cl_temperature: base.cl_temperature,
            prob_floor: base.prob_floor,
            invdpo_form: base.invdpo_form,
            ..preset
        }
    }
}

fn parse_reps(s: &str) -> Result<RepRange, String> {
    s.parse::<RepRange>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    /// Input file with one prompt per line, or `-` for stdin.
    #[arg(long = "in", value_name = "FILE|-")]
    pub input: String,
    /// Perturbation kind, or `random` for a uniform draw per prompt.
    #[arg(long, value_enum, default_value = "random")]
    pub kind: KindArg,
    #[arg(long, help = SEED_HELP)]
    pub seed: Option<u64>,
    /// Repetition range `a..b` (inclusive), applied to every kind.
    #[arg(long, value_parser = parse_reps)]
    pub reps: Option<RepRange>,
    /// Output JSONL file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Synonym lexicon TSV replacing the built-in table.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// JSON RunConfig; only `seed`, `lexicon` and `perturbation` are read.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// JSON RunConfig.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Source records JSONL (`task_name`, `fields`); the bundled suite when omitted.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Templates JSON; the bundled suite templates when omitted.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Number of paired examples to draw.
    #[arg(long)]
    pub count: Option<usize>,
    /// PairedExample JSONL output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also hold out records per task and write clean plus perturbed eval cases here.
    #[arg(long)]
    pub eval_out: Option<PathBuf>,
    /// Records per task held out for `--eval-out`.
    #[arg(long)]
    pub eval_per_task: Option<usize>,
    #[arg(long, help = SEED_HELP)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON RunConfig.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// PairedExample JSONL.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Templates JSON; option labels join the vocabulary. Bundled suite templates when omitted.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-step metrics JSONL output.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Loss preset; replaces the config's loss weights.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for triple sampling and batch order (init uses `model.init_seed`).
    #[arg(long, help = SEED_HELP)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON RunConfig.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Eval cases JSONL written by `build-dataset --eval-out`.
    #[arg(long)]
    pub cases: Option<PathBuf>,
    /// EvalReport JSON output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Model name recorded in the report.
    #[arg(long, default_value = "model")]
    pub name: String,
    /// Accuracy thresholds for decoding radii.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// EvalReport JSON files.
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| io_err(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn required<'a>(flag: &'a Option<PathBuf>, config: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    flag.as_deref()
        .or(config.as_deref())
        .ok_or_else(|| CliError::Usage(format!("missing {what}: pass the flag or set it in --config")))
}

fn templates_from(path: Option<&Path>) -> Result<Vec<TaskTemplate>, CliError> {
    Ok(match path {
        Some(p) => load_templates(p)?,
        None => parse_templates(SUITE_TEMPLATES_JSON)?,
    })
}

fn perturber_from(config: &RunConfig, lexicon: Option<&Path>, reps: Option<RepRange>) -> Result<Perturber, CliError> {
    let mut pc = config.perturbation.clone();
    if let Some(l) = lexicon.or(config.lexicon.as_deref()) {
        pc.lexicon_path = Some(l.to_path_buf());
    }
    if let Some(r) = reps {
        pc = pc.with_reps(r);
    }
    pc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(Perturber::new(pc)?)
}

pub fn cmd_perturb(args: &PerturbArgs) -> Result<(), CliError> {
    let config = RunConfig::from_flag(args.config.as_deref())?;
    let seed = seed_from(args.seed, &config)?;
    let perturber = perturber_from(&config, args.lexicon.as_deref(), args.reps)?;
    let lines: Vec<String> = if args.input == "-" {
        std::io::stdin().lock().lines().collect::<Result<_, _>>()?
    } else {
        let p = Path::new(&args.input);
        std::fs::read_to_string(p)
            .map_err(|e| io_err(p, e))?
            .lines()
            .map(str::to_string)
            .collect()
    };
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut rng = SeededRng::derive(seed, i as u64);
        let noisy = perturber.perturb(&CleanPrompt::new(line.as_str())?, args.kind.kind(), &mut rng)?;
        out.push_str(&serde_json::to_string(&noisy)?);
        out.push('\n');
    }
    write_output(args.out.as_deref(), &out)
}

pub fn cmd_build_dataset(args: &BuildArgs) -> Result<(), CliError> {
    let config = RunConfig::from_flag(args.config.as_deref())?;
    let seed = seed_from(args.seed, &config)?;
    let out = required(&args.out, &config.dataset, "output path (--out)")?;
    let templates = templates_from(args.templates.as_deref().or(config.templates.as_deref()))?;
    let records = match args.records.as_deref().or(config.records.as_deref()) {
        Some(p) => read_records_jsonl(p)?,
        None => parse_records_jsonl(SUITE_RECORDS_JSONL)?,
    };
    let perturber = perturber_from(&config, None, None)?;
    let eval_out = args.eval_out.as_deref().or(config.eval_set.as_deref());
    let (train_records, eval_records) = match eval_out {
        Some(_) => {
            let per_task = args.eval_per_task.unwrap_or(config.eval_per_task);
            split_records(&records, per_task, &mut SeededRng::derive(seed, 0))
        }
        None => (records, Vec::new()),
    };
    let count = args.count.unwrap_or(config.pairs);
    let pairs = build_pairs(
        &train_records,
        &templates,
        &perturber,
        count,
        &mut SeededRng::derive(seed, 1),
    )?;
    write_jsonl(&pairs, out)?;
    log::info!("wrote {} pairs to {}", pairs.len(), out.display());
    if let Some(path) = eval_out {
        let cases =
            crate::eval::build_eval_cases(&eval_records, &templates, &perturber, &mut SeededRng::derive(seed, 2))?;
        write_cases_jsonl(&cases, path)?;
        log::info!("wrote {} eval cases to {}", cases.len(), path.display());
    }
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let config = RunConfig::from_flag(args.config.as_deref())?;
    let seed = seed_from(args.seed, &config)?;
    let dataset_path = required(&args.dataset, &config.dataset, "dataset (--dataset)")?;
    let out = required(&args.out, &config.checkpoint, "checkpoint path (--out)")?;
    let templates = templates_from(args.templates.as_deref().or(config.templates.as_deref()))?;
    let loss = args
        .method
        .map_or_else(|| config.loss.clone(), |m| m.loss(&config.loss));
    loss.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    config.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let epochs = args.epochs.unwrap_or(config.epochs);
    let batch_size = args.batch_size.unwrap_or(config.batch_size);
    let lr = args.lr.unwrap_or(config.learning_rate);

    let dataset = read_jsonl(dataset_path)?;
    let mut corpus = vocab_corpus(&dataset);
    // option labels always enter the vocabulary, whatever their count
    let labels: Vec<String> = templates.iter().flat_map(|t| t.option_labels.iter().cloned()).collect();
    for _ in 0..config.vocab_min_count.max(1) {
        corpus.extend(labels.iter().cloned());
    }
    let vocab = bounded_vocab(
        &corpus,
        config.vocab_min_count,
        config.vocab_limit.unwrap_or(usize::MAX),
    )?;
    let init = ToyLm::new(config.model.clone(), vocab)?;
    log::info!("vocab {} tokens, {} examples", init.vocab.len(), dataset.len());

    let tokens = if epochs == 0 {
        Vec::new()
    } else {
        make_triples(&dataset, &mut SeededRng::derive(seed, 1_000))?
            .iter()
            .map(|t| encode_triple(&init.vocab, t))
            .collect::<Result<Vec<_>, _>>()?
    };
    let mut opt = OptimizerState::new(lr);
    let outcome = train(init.params.clone(), &tokens, &loss, &mut opt, epochs, batch_size, seed)?;
    if let Some(last) = outcome.log.last() {
        log::info!("final step {}: total={:.6}", last.step, last.total);
    }
    let model = ToyLm {
        params: outcome.params,
        ..init
    };
    model.save(out)?;
    if let Some(m) = args.metrics.as_deref().or(config.metrics.as_deref()) {
        write_metrics_jsonl(&outcome.log, m)?;
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let config = RunConfig::from_flag(args.config.as_deref())?;
    let ckpt = required(&args.checkpoint, &config.checkpoint, "checkpoint (--checkpoint)")?;
    let cases_path = required(&args.cases, &config.eval_set, "eval set (--cases)")?;
    let model = ToyLm::load(ckpt)?;
    let cases = read_cases_jsonl(cases_path)?;
    let results = evaluate_cases(&model, &cases)?;
    let thresholds = args.thresholds.clone().unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec());
    let report = render_report(&args.name, &results, &thresholds)?;
    let out = args.out.as_deref().or(config.report.as_deref());
    write_output(out, &report.to_canonical_json())
}

pub fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let reports = args
        .inputs
        .iter()
        .map(|p| EvalReport::read(p))
        .collect::<Result<Vec<_>, _>>()?;
    write_output(args.out.as_deref(), &crate::eval::grid_csv(&reports))
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Perturb(a) => cmd_perturb(a),
        Command::BuildDataset(a) => cmd_build_dataset(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> ExitCode {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .try_init();
    ExitCode::from(run(std::env::args_os()))
}
