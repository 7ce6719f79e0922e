use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::corpus::{index_sites, CandidateStore, Corpus, Turn};
use crate::generator::{reinitialize_policy, PolicyNet, StateCache};
use crate::numerics::SeedTree;
use crate::scalar::Scalar;
use crate::tracker::{build_vocab, joint_goal_accuracy, EpochMetrics, TrackerModel};

use super::augment::{generate_augmented_data, AugmentedSet, Chooser};
use super::epoch::{generator_learning_epoch, GeneratorContext};
use super::{TrainConfig, TrainError};

/// Splits and candidates for one run.
#[derive(Clone, Debug)]
pub struct RdaData {
    pub train: Corpus,
    pub validation: Corpus,
    pub test: Option<Corpus>,
    pub store: CandidateStore,
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    pub joint_goal_accuracy: f64,
    pub loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Progress {
    completed_epoch: usize,
    best_epoch: usize,
    best_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub validation_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub loss: Option<f64>,
    pub augmented: usize,
}

#[derive(Clone, Debug)]
pub struct RdaOutcome<T> {
    pub best: TrackerModel<T>,
    /// 0 when no alternate epoch ran.
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub pretrained_accuracy: f64,
    pub epochs: Vec<EpochSummary>,
    pub final_policy: Option<PolicyNet<T>>,
}

/// Output directory of a run.
#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

fn io_err(path: &Path, source: std::io::Error) -> TrainError {
    TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, TrainError> {
        let dir = root.join("checkpoints");
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn tracker_checkpoint(&self, epoch: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("epoch_{epoch}.bin"))
    }

    pub fn policy_checkpoint(&self, epoch: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("policy_{epoch}.bin"))
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), TrainError> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))
    }

    pub fn write_config(&self, config: &TrainConfig) -> Result<(), TrainError> {
        let mut text = serde_json::to_string_pretty(config).expect("config serializes");
        text.push('\n');
        self.write("config.json", text.as_bytes())
    }

    pub fn read_config(&self) -> Result<TrainConfig, TrainError> {
        let path = self.path("config.json");
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        serde_json::from_str(&text).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))
    }

    /// Truncates both JSON-lines files before writing anything new.
    fn reset_logs(&self) -> Result<(), TrainError> {
        self.write("metrics.jsonl", b"")?;
        self.write("rewards.jsonl", b"")
    }

    fn append<S: Serialize>(&self, name: &str, records: &[S]) -> Result<(), TrainError> {
        let path = self.path(name);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        let mut out = BufWriter::new(file);
        for r in records {
            serde_json::to_writer(&mut out, r).expect("record serializes");
            out.write_all(b"\n").map_err(|e| io_err(&path, e))?;
        }
        out.flush().map_err(|e| io_err(&path, e))
    }

    /// Drops log lines written after `epoch` (left behind by an interrupted run).
    fn truncate_logs(&self, epoch: usize) -> Result<(), TrainError> {
        for name in ["metrics.jsonl", "rewards.jsonl"] {
            let path = self.path(name);
            let Ok(file) = File::open(&path) else { continue };
            let mut kept = String::new();
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| io_err(&path, e))?;
                let v: serde_json::Value = serde_json::from_str(&line)
                    .map_err(|e| TrainError::Checkpoint(format!("{}: {e}", path.display())))?;
                if v.get("epoch").and_then(|e| e.as_u64()).is_some_and(|e| e as usize <= epoch) {
                    kept.push_str(&line);
                    kept.push('\n');
                }
            }
            fs::write(&path, kept).map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }

    fn save_tracker<T: Scalar>(&self, epoch: usize, model: &TrackerModel<T>) -> Result<(), TrainError> {
        let path = self.tracker_checkpoint(epoch);
        let mut bytes = Vec::new();
        model.save(&mut bytes)?;
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))
    }

    pub fn load_tracker<T: Scalar>(&self, epoch: usize) -> Result<TrackerModel<T>, TrainError> {
        let path = self.tracker_checkpoint(epoch);
        let file = File::open(&path).map_err(|e| io_err(&path, e))?;
        Ok(TrackerModel::load(BufReader::new(file))?)
    }

    fn save_policy<T: Scalar>(&self, epoch: usize, policy: &PolicyNet<T>, seed: u64) -> Result<(), TrainError> {
        let path = self.policy_checkpoint(epoch);
        let mut bytes = Vec::new();
        policy.save(&mut bytes, seed)?;
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))
    }

    fn save_progress(&self, p: &Progress) -> Result<(), TrainError> {
        let text = serde_json::to_string(p).expect("progress serializes");
        self.write("progress.json", text.as_bytes())
    }

    fn read_progress(&self) -> Result<Option<Progress>, TrainError> {
        let path = self.path("progress.json");
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| TrainError::Checkpoint(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path, e)),
        }
    }
}

/// Untrained tracker over the vocabulary of `train` (and of `store`, so that
/// every replacement is embeddable).
pub fn fresh_tracker<T: Scalar>(
    train: &Corpus,
    store: Option<&CandidateStore>,
    config: &TrainConfig,
) -> Result<TrackerModel<T>, TrainError> {
    let tree = SeedTree::new(config.seed);
    Ok(TrackerModel::new(
        config.tracker.clone(),
        build_vocab(train, store),
        train.ontology.clone(),
        config.seed,
        &mut tree.stream("tracker-init"),
    )?)
}

/// Fresh tracker trained for `pretrain_epochs`.
pub fn pretrain_tracker<T: Scalar>(
    data: &RdaData,
    config: &TrainConfig,
) -> Result<(TrackerModel<T>, Vec<EpochMetrics>), TrainError> {
    let init = fresh_tracker(&data.train, Some(&data.store), config)?;
    let turns: Vec<&Turn> = data.train.turns().collect();
    Ok(init.train(
        &turns,
        Some(&data.validation.dialogues),
        config.pretrain_epochs,
        &mut SeedTree::new(config.seed).stream("pretrain"),
    )?)
}

fn accuracy<T: Scalar>(model: &TrackerModel<T>, corpus: &Corpus) -> Result<f64, TrainError> {
    Ok(joint_goal_accuracy(model, &corpus.dialogues, model.config().threshold)?)
}

fn metric_records<T: Scalar>(
    data: &RdaData,
    model: &TrackerModel<T>,
    epoch: usize,
    loss: Option<f64>,
) -> Result<(f64, Option<f64>, Vec<MetricRecord>), TrainError> {
    let val = accuracy(model, &data.validation)?;
    let mut records = vec![MetricRecord {
        epoch,
        split: "validation".into(),
        joint_goal_accuracy: val,
        loss,
    }];
    let test = data.test.as_ref().map(|t| accuracy(model, t)).transpose()?;
    if let Some(acc) = test {
        records.push(MetricRecord {
            epoch,
            split: "test".into(),
            joint_goal_accuracy: acc,
            loss: None,
        });
    }
    Ok((val, test, records))
}

/// Augmented data for one epoch: policy-driven unless `policy` is `None`.
fn augment<T: Scalar>(
    policy: Option<&PolicyNet<T>>,
    cache: &mut StateCache<'_, T>,
    count: usize,
    tree: &SeedTree,
) -> Result<AugmentedSet, TrainError> {
    let groups = crate::corpus::SpanGroups::new(cache.sites());
    let chooser = policy.map_or(Chooser::Uniform, Chooser::Policy);
    generate_augmented_data(chooser, cache, &groups, count, &mut tree.stream("generate"))
}

/// Alternates policy learning and tracker re-training for
/// `config.alternate_epochs` epochs starting from `pretrained`, and returns
/// the epoch model with the best validation accuracy.
///
/// With a run directory, every epoch leaves a tracker checkpoint, metrics and
/// reward traces behind; `resume` continues after the last completed epoch.
pub fn alternate_learning<T: Scalar>(
    data: &RdaData,
    pretrained: TrackerModel<T>,
    config: &TrainConfig,
    run: Option<&RunDir>,
    resume: bool,
) -> Result<RdaOutcome<T>, TrainError> {
    config.validate()?;
    if data.validation.is_empty() {
        return Err(TrainError::EmptyValidation);
    }
    let sites = index_sites(&data.train, &data.store);
    if sites.is_empty() {
        return Err(TrainError::NoSites);
    }
    let tree = SeedTree::new(config.seed);
    let pretrained_accuracy = accuracy(&pretrained, &data.validation)?;

    let mut theta_r = pretrained;
    let mut start = 1;
    let mut best: Option<(usize, f64, TrackerModel<T>)> = None;
    match (run, resume) {
        (Some(dir), true) => {
            if let Some(p) = dir.read_progress()? {
                theta_r = dir.load_tracker(p.completed_epoch)?;
                if p.completed_epoch > 0 {
                    best = Some((p.best_epoch, p.best_accuracy, dir.load_tracker(p.best_epoch)?));
                }
                start = p.completed_epoch + 1;
                dir.truncate_logs(p.completed_epoch)?;
            } else {
                return Err(TrainError::Checkpoint(format!(
                    "{}: nothing to resume",
                    dir.root().display()
                )));
            }
        }
        (Some(dir), false) => {
            dir.reset_logs()?;
            dir.save_tracker(0, &theta_r)?;
            let (_, _, records) = metric_records(data, &theta_r, 0, None)?;
            dir.append("metrics.jsonl", &records)?;
            dir.save_progress(&Progress {
                completed_epoch: 0,
                best_epoch: 0,
                best_accuracy: pretrained_accuracy,
            })?;
        }
        (None, _) => {}
    }

    let train_turns: Vec<&Turn> = data.train.turns().collect();
    let mut epochs = Vec::new();
    let mut final_policy = None;
    for l in start..=config.alternate_epochs {
        let etree = tree.child(&format!("epoch-{l}"));
        let frozen = theta_r.clone();
        let mut cache = StateCache::new(&frozen, &data.train, &sites);
        let count = config.augmentation_multiplier * train_turns.len();

        let (augmented, traces) = if config.da_only {
            (augment(None, &mut cache, count, &etree)?, Vec::new())
        } else {
            let validation = data
                .validation
                .subsample(config.validation_ratio, &mut etree.stream("validation-subsample"))
                .dialogues;
            let mut ctx = GeneratorContext::new(&frozen, cache, validation)?;
            let fresh = reinitialize_policy(
                frozen.encoder_dim(),
                frozen.embedding_dim(),
                config.policy_hidden,
                &mut tree.stream("policy-init"),
            );
            let (policy, traces) = generator_learning_epoch(&mut ctx, fresh, config, l, &etree)?;
            let augmented = augment(Some(&policy), &mut ctx.cache, count, &etree)?;
            if let Some(dir) = run {
                dir.save_policy(l, &policy, config.seed)?;
            }
            final_policy = Some(policy);
            (augmented, traces)
        };

        let keep = ((augmented.len() as f64) * config.augmented_ratio).round() as usize;
        let chosen = sample(&mut etree.stream("subset"), augmented.len(), keep).into_vec();
        let mut mixed = train_turns.clone();
        mixed.extend(chosen.iter().map(|&i| &augmented.instances[i].turn));
        let (retrained, metrics) = theta_r.train(
            &mixed,
            Some(&data.validation.dialogues),
            config.retrain_epochs,
            &mut etree.stream("retrain"),
        )?;
        theta_r = retrained;
        let loss = metrics.last().map(|m| m.loss);
        let (val, test, records) = metric_records(data, &theta_r, l, loss)?;
        if best.as_ref().is_none_or(|(_, b, _)| val > *b) {
            best = Some((l, val, theta_r.clone()));
        }
        let (best_epoch, best_accuracy, _) = best.as_ref().expect("set above");
        if let Some(dir) = run {
            dir.append("rewards.jsonl", &traces)?;
            dir.append("metrics.jsonl", &records)?;
            let text = serde_json::to_string_pretty(&augmented.to_json()).expect("serializes");
            dir.write(&format!("augmented_{l}.json"), text.as_bytes())?;
            dir.save_tracker(l, &theta_r)?;
            dir.save_progress(&Progress {
                completed_epoch: l,
                best_epoch: *best_epoch,
                best_accuracy: *best_accuracy,
            })?;
        }
        epochs.push(EpochSummary {
            epoch: l,
            validation_accuracy: val,
            test_accuracy: test,
            loss,
            augmented: augmented.len(),
        });
    }

    Ok(match best {
        Some((best_epoch, best_accuracy, best)) => RdaOutcome {
            best,
            best_epoch,
            best_accuracy,
            pretrained_accuracy,
            epochs,
            final_policy,
        },
        None => RdaOutcome {
            best: theta_r,
            best_epoch: 0,
            best_accuracy: pretrained_accuracy,
            pretrained_accuracy,
            epochs,
            final_policy,
        },
    })
}

/// Writes the resolved config, pretrains when no tracker is given, then runs
/// [`alternate_learning`].
pub fn run_rda<T: Scalar>(
    data: &RdaData,
    pretrained: Option<TrackerModel<T>>,
    config: &TrainConfig,
    run: Option<&RunDir>,
) -> Result<RdaOutcome<T>, TrainError> {
    config.validate()?;
    if let Some(dir) = run {
        dir.write_config(config)?;
    }
    let pretrained = match pretrained {
        Some(m) => m,
        None => pretrain_tracker(data, config)?.0,
    };
    alternate_learning(data, pretrained, config, run, false)
}

/// Continues an interrupted run from its directory.
pub fn resume_rda<T: Scalar>(data: &RdaData, run: &RunDir) -> Result<RdaOutcome<T>, TrainError> {
    let config = run.read_config()?;
    let pretrained = run.load_tracker(0)?;
    alternate_learning(data, pretrained, &config, Some(run), true)
}
