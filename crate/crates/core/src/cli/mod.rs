//! The `rda` command-line driver.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 training divergence.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::corpus::{
    index_sites, load_candidates, load_ontology, CandidateStore, Corpus, CorpusError, SpanGroups,
    Split,
};
use crate::generator::{candidate_distribution, GeneratorError, StateCache};
use crate::numerics::SeedTree;
use crate::synthetic::{self, SyntheticKind, SyntheticSpec};
use crate::trainloop::{
    fresh_tracker, generate_augmented_data, resume_rda, run_rda, Chooser, MetricRecord, RdaData,
    RunDir, TrainConfig, TrainError,
};
use crate::tracker::{joint_goal_accuracy, TrackerError};
use crate::{Policy, Tracker};

#[derive(Debug, Parser)]
#[command(name = "rda", version, about = "Reinforced data augmentation for dialog state tracking")]
pub struct Cli {
    /// Suppress progress messages on stderr.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus (train/validation/test JSON and a candidate TSV).
    MakeSynthetic(MakeSyntheticArgs),
    /// Train the baseline tracker.
    TrainTracker(TrainTrackerArgs),
    /// Alternate generator learning and tracker re-training.
    TrainRda(TrainRdaArgs),
    /// Print the joint goal accuracy of a tracker checkpoint on a split.
    Eval(EvalArgs),
    /// Export augmented data drawn from a policy (or uniformly without one).
    Augment(AugmentArgs),
    /// Print the policy's candidate distribution for every augmentation site.
    InspectPolicy(InspectArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Kind {
    Planted,
    Rule,
}

#[derive(Debug, Args)]
pub struct MakeSyntheticArgs {
    #[arg(long, value_enum, default_value = "planted")]
    pub kind: Kind,
    #[arg(long, default_value_t = 300)]
    pub dialogues: usize,
    /// Fraction of the training split to keep.
    #[arg(long, default_value_t = 1.0)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub validation: PathBuf,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Ontology file; defaults to the one embedded in the training file.
    #[arg(long)]
    pub ontology: Option<PathBuf>,
}

/// Flags that override the `--config` file.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// JSON file holding a (partial) training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alternate_epochs: Option<usize>,
    #[arg(long)]
    pub generator_epochs: Option<usize>,
    #[arg(long)]
    pub bag_resamples: Option<usize>,
    #[arg(long)]
    pub bag_size: Option<usize>,
    #[arg(long)]
    pub instance_constant: Option<f64>,
    #[arg(long)]
    pub augmentation_multiplier: Option<usize>,
    #[arg(long)]
    pub augmented_ratio: Option<f64>,
    #[arg(long)]
    pub validation_ratio: Option<f64>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub retrain_epochs: Option<usize>,
    #[arg(long)]
    pub fine_tune_learning_rate: Option<f64>,
    #[arg(long)]
    pub policy_learning_rate: Option<f64>,
    #[arg(long)]
    pub policy_hidden: Option<usize>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub encoder_dim: Option<usize>,
    #[arg(long)]
    pub scorer_hidden: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainTrackerArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Candidate TSV; its tokens join the vocabulary so the checkpoint can
    /// later drive `train-rda`.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// Training epochs; defaults to the configured `pretrain_epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct TrainRdaArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub candidates: PathBuf,
    /// Pre-trained tracker checkpoint.
    #[arg(long, conflicts_with = "pretrain")]
    pub pretrained: Option<PathBuf>,
    /// Pre-train the tracker first.
    #[arg(long)]
    pub pretrain: bool,
    /// Continue an interrupted run in `--out`.
    #[arg(long)]
    pub resume: bool,
    /// Uniform candidate choice instead of a learned policy.
    #[arg(long)]
    pub da_only: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset file to score.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub candidates: PathBuf,
    /// Tracker checkpoint providing the policy's context features.
    #[arg(long)]
    pub tracker: PathBuf,
    /// Policy checkpoint; uniform choice without one.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub multiplier: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub tracker: PathBuf,
    #[arg(long)]
    pub policy: PathBuf,
    /// Only the first `limit` sites.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_divergence() {
            return CliError::Divergence(e.to_string());
        }
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Corpus(c) => c.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match &e {
            CorpusError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrackerError> for CliError {
    fn from(e: TrackerError) -> Self {
        TrainError::from(e).into()
    }
}

impl From<GeneratorError> for CliError {
    fn from(e: GeneratorError) -> Self {
        TrainError::from(e).into()
    }
}

/// Parses `std::env::args` and runs the command.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let log = |msg: &str| {
        if !cli.quiet {
            eprintln!("{msg}");
        }
    };
    match &cli.command {
        Command::MakeSynthetic(a) => make_synthetic(a),
        Command::TrainTracker(a) => train_tracker(a, &log),
        Command::TrainRda(a) => train_rda(a, &log),
        Command::Eval(a) => eval(a),
        Command::Augment(a) => augment(a),
        Command::InspectPolicy(a) => inspect_policy(a),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    let msg = format!("{}: {e}", path.display());
    if e.kind() == std::io::ErrorKind::NotFound {
        CliError::Usage(msg)
    } else {
        CliError::Data(msg)
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializes");
    text.push('\n');
    write(path, text.as_bytes())
}

fn load_corpus(path: &Path, ontology: Option<Arc<crate::corpus::Ontology>>, split: Split) -> Result<Corpus, CliError> {
    let text = read(path)?;
    Corpus::from_json_str(&text, ontology, split)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_tracker(path: &Path) -> Result<Tracker, CliError> {
    let file = fs::File::open(path).map_err(|e| io_error(path, e))?;
    Tracker::load(std::io::BufReader::new(file))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_policy(path: &Path) -> Result<Policy, CliError> {
    let file = fs::File::open(path).map_err(|e| io_error(path, e))?;
    Policy::load(std::io::BufReader::new(file))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Train, validation and optional test splits sharing one ontology.
fn load_splits(data: &DataArgs) -> Result<(Corpus, Corpus, Option<Corpus>), CliError> {
    let ontology = data
        .ontology
        .as_deref()
        .map(load_ontology)
        .transpose()?
        .map(Arc::new);
    let train = load_corpus(&data.train, ontology, Split::Train)?;
    let onto = Some(Arc::clone(&train.ontology));
    let validation = load_corpus(&data.validation, onto.clone(), Split::Validation)?;
    let test = data
        .test
        .as_deref()
        .map(|p| load_corpus(p, onto.clone(), Split::Test))
        .transpose()?;
    if train.is_empty() {
        return Err(CliError::Usage(format!("{}: no training turns", data.train.display())));
    }
    if validation.is_empty() {
        return Err(CliError::Usage(format!("{}: no validation turns", data.validation.display())));
    }
    Ok((train, validation, test))
}

impl Overrides {
    /// The `--config` file (or defaults) with every given flag applied.
    pub fn resolve(&self) -> Result<TrainConfig, CliError> {
        let mut c: TrainConfig = match &self.config {
            Some(path) => serde_json::from_str(&read(path)?)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $($target:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$field { c.$($target).+ = v; })*
            };
        }
        set!(
            seed => seed,
            alternate_epochs => alternate_epochs,
            generator_epochs => generator_epochs,
            bag_resamples => bag_resamples,
            bag_size => bag_size,
            instance_constant => instance_constant,
            augmentation_multiplier => augmentation_multiplier,
            augmented_ratio => augmented_ratio,
            validation_ratio => validation_ratio,
            pretrain_epochs => pretrain_epochs,
            retrain_epochs => retrain_epochs,
            fine_tune_learning_rate => fine_tune_learning_rate,
            policy_learning_rate => policy_learning_rate,
            policy_hidden => policy_hidden,
            embedding_dim => tracker.embedding_dim,
            encoder_dim => tracker.encoder_dim,
            scorer_hidden => tracker.scorer_hidden,
            learning_rate => tracker.learning_rate,
            batch_size => tracker.batch_size,
        );
        c.validate()?;
        Ok(c)
    }
}

fn make_synthetic(a: &MakeSyntheticArgs) -> Result<(), CliError> {
    if !(a.train_fraction > 0.0 && a.train_fraction <= 1.0) {
        return Err(CliError::Usage(format!("--train-fraction {} outside (0, 1]", a.train_fraction)));
    }
    let kind = match a.kind {
        Kind::Planted => SyntheticKind::Planted,
        Kind::Rule => SyntheticKind::Rule,
    };
    let c = synthetic::generate(&SyntheticSpec {
        kind,
        dialogues: a.dialogues,
        train_fraction: a.train_fraction,
        seed: a.seed,
        ..SyntheticSpec::default()
    });
    write_json(&a.out.join("train.json"), &c.train)?;
    write_json(&a.out.join("validation.json"), &c.validation)?;
    write_json(&a.out.join("test.json"), &c.test)?;
    write(&a.out.join("candidates.tsv"), c.candidates.as_bytes())?;
    if kind == SyntheticKind::Planted {
        let planted: Vec<_> = c
            .planted
            .iter()
            .map(|(span, good, bad)| serde_json::json!({ "span": span, "good": good, "bad": bad }))
            .collect();
        write_json(&a.out.join("planted.json"), &planted)?;
    }
    Ok(())
}

fn jsonl<S: Serialize>(records: &[S]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("serializes") + "\n")
        .collect()
}

fn save_tracker(path: &Path, model: &Tracker) -> Result<(), CliError> {
    let mut bytes = Vec::new();
    model.save(&mut bytes)?;
    write(path, &bytes)
}

fn train_tracker(a: &TrainTrackerArgs, log: &dyn Fn(&str)) -> Result<(), CliError> {
    let config = a.overrides.resolve()?;
    let (train, validation, test) = load_splits(&a.data)?;
    let store = a
        .candidates
        .as_deref()
        .map(|p| load_candidates(p, &train.ontology, &train))
        .transpose()?;
    write_json(&a.out.join("config.json"), &config)?;
    let init: Tracker = fresh_tracker(&train, store.as_ref(), &config)?;
    let epochs = a.epochs.unwrap_or(config.pretrain_epochs);
    log(&format!("training tracker for {epochs} epochs on {} turns", train.num_turns()));
    let turns: Vec<_> = train.turns().collect();
    let (model, metrics) = init.train(
        &turns,
        Some(&validation.dialogues),
        epochs,
        &mut SeedTree::new(config.seed).stream("pretrain"),
    )?;
    let mut records: Vec<MetricRecord> = metrics
        .iter()
        .map(|m| MetricRecord {
            epoch: m.epoch,
            split: "validation".into(),
            joint_goal_accuracy: m.validation_accuracy.unwrap_or(0.0),
            loss: Some(m.loss),
        })
        .collect();
    let threshold = model.config().threshold;
    let best = joint_goal_accuracy(&model, &validation.dialogues, threshold)?;
    log(&format!("validation joint goal accuracy {best:.4}"));
    if let Some(t) = &test {
        records.push(MetricRecord {
            epoch: epochs,
            split: "test".into(),
            joint_goal_accuracy: joint_goal_accuracy(&model, &t.dialogues, threshold)?,
            loss: None,
        });
    }
    write(&a.out.join("metrics.jsonl"), jsonl(&records).as_bytes())?;
    save_tracker(&a.out.join("tracker.bin"), &model)
}

fn train_rda(a: &TrainRdaArgs, log: &dyn Fn(&str)) -> Result<(), CliError> {
    let (train, validation, test) = load_splits(&a.data)?;
    let store = load_candidates(&a.candidates, &train.ontology, &train)?;
    let data = RdaData { train, validation, test, store };
    let run = RunDir::create(&a.out)?;
    let outcome = if a.resume {
        log(&format!("resuming {}", a.out.display()));
        resume_rda::<f64>(&data, &run)?
    } else {
        let mut config = a.overrides.resolve()?;
        config.da_only |= a.da_only;
        let pretrained = match (&a.pretrained, a.pretrain) {
            (Some(path), _) => Some(load_tracker(path)?),
            (None, true) => None,
            (None, false) => {
                return Err(CliError::Usage("give --pretrained CHECKPOINT or --pretrain".into()))
            }
        };
        if let Some(m) = &pretrained {
            if m.ontology().as_map() != data.train.ontology.as_map() {
                return Err(CliError::Usage("pre-trained tracker was built for another ontology".into()));
            }
        }
        log(&format!(
            "{} for {} alternate epochs",
            if config.da_only { "uniform augmentation" } else { "reinforced augmentation" },
            config.alternate_epochs
        ));
        run_rda(&data, pretrained, &config, Some(&run))?
    };
    save_tracker(&run.path("best.bin"), &outcome.best)?;
    let summary = serde_json::json!({
        "best_epoch": outcome.best_epoch,
        "best_validation_accuracy": outcome.best_accuracy,
        "pretrained_validation_accuracy": outcome.pretrained_accuracy,
        "best_test_accuracy": outcome
            .epochs
            .iter()
            .find(|e| e.epoch == outcome.best_epoch)
            .and_then(|e| e.test_accuracy),
    });
    println!("{summary}");
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let model = load_tracker(&a.checkpoint)?;
    let corpus = load_corpus(&a.data, Some(Arc::clone(model.ontology())), Split::Test)?;
    if corpus.is_empty() {
        return Err(CliError::Usage(format!("{}: no turns to evaluate", a.data.display())));
    }
    let acc = joint_goal_accuracy(&model, &corpus.dialogues, model.config().threshold)?;
    let out = serde_json::json!({
        "joint_goal_accuracy": acc,
        "dialogues": corpus.dialogues.len(),
        "turns": corpus.num_turns(),
    });
    println!("{out}");
    Ok(())
}

/// Train corpus, candidate store and sites against the tracker's ontology.
fn site_setup(
    train: &Path,
    candidates: &Path,
    tracker: &Tracker,
) -> Result<(Corpus, CandidateStore), CliError> {
    let train = load_corpus(train, Some(Arc::clone(tracker.ontology())), Split::Train)?;
    let store = load_candidates(candidates, &train.ontology, &train)?;
    Ok((train, store))
}

fn augment(a: &AugmentArgs) -> Result<(), CliError> {
    let tracker = load_tracker(&a.tracker)?;
    let policy = a.policy.as_deref().map(load_policy).transpose()?;
    let (train, store) = site_setup(&a.train, &a.candidates, &tracker)?;
    let sites = index_sites(&train, &store);
    if sites.is_empty() {
        return Err(TrainError::NoSites.into());
    }
    let groups = SpanGroups::new(&sites);
    let mut cache = StateCache::new(&tracker, &train, &sites);
    let chooser = policy.as_ref().map_or(Chooser::Uniform, Chooser::Policy);
    let set = generate_augmented_data(
        chooser,
        &mut cache,
        &groups,
        a.multiplier * train.num_turns(),
        &mut SeedTree::new(a.seed).stream("augment"),
    )?;
    write_json(&a.out, &set.to_json())
}

#[derive(Serialize)]
struct InspectedCandidate {
    text: String,
    probability: f64,
    max: bool,
    min: bool,
}

#[derive(Serialize)]
struct InspectedSite {
    sentence: String,
    span: String,
    candidates: Vec<InspectedCandidate>,
}

fn inspect_policy(a: &InspectArgs) -> Result<(), CliError> {
    let tracker = load_tracker(&a.tracker)?;
    let policy = load_policy(&a.policy)?;
    let (train, store) = site_setup(&a.train, &a.candidates, &tracker)?;
    let sites = index_sites(&train, &store);
    let limit = a.limit.unwrap_or(sites.len());
    let mut out = Vec::with_capacity(limit.min(sites.len()));
    for site in sites.iter().take(limit) {
        let mut dist = candidate_distribution(&policy, site, &train, &tracker)?;
        dist.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.text.cmp(&y.0.text)));
        let hi = dist.first().map_or(0.0, |d| d.1);
        let lo = dist.last().map_or(0.0, |d| d.1);
        out.push(InspectedSite {
            sentence: site.turn(&train).user_text(),
            span: site.span_text.clone(),
            candidates: dist
                .into_iter()
                .map(|(c, p)| InspectedCandidate {
                    text: c.text,
                    probability: p,
                    max: p == hi,
                    min: p == lo,
                })
                .collect(),
        });
    }
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &out).expect("serializes");
    writeln!(stdout).map_err(|e| CliError::Data(e.to_string()))
}
