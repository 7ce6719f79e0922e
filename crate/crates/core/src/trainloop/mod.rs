//! Alternating policy learning and tracker re-training.

mod alternate;
mod augment;
mod bags;
mod config;
mod epoch;

pub use alternate::{
    alternate_learning, fresh_tracker, pretrain_tracker, resume_rda, run_rda, EpochSummary,
    MetricRecord, RdaData, RdaOutcome, RunDir,
};
pub use augment::{generate_augmented_data, keeps, AugmentedInstance, AugmentedSet, Chooser};
pub use bags::{
    evaluate_bag, materialize, policy_gradient_step, sample_bag, sample_bags, sample_site, Bag,
    SampledBag,
};
pub use config::TrainConfig;
pub use epoch::{generator_learning_epoch, GeneratorContext, RewardTrace};

use crate::corpus::CorpusError;
use crate::generator::GeneratorError;
use crate::numerics::NumericsError;
use crate::rewards::RewardError;
use crate::tracker::TrackerError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no augmentation sites: no training span has a usable candidate")]
    NoSites,
    #[error("validation split is empty")]
    EmptyValidation,
    #[error("epoch {epoch}, iteration {iteration}: {source}")]
    Iteration {
        epoch: usize,
        iteration: usize,
        source: Box<TrainError>,
    },
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl TrainError {
    /// Whether the error comes from non-finite values during training.
    pub fn is_divergence(&self) -> bool {
        match self {
            TrainError::Divergence(_) => true,
            TrainError::Iteration { source, .. } => source.is_divergence(),
            TrainError::Tracker(TrackerError::Divergence(_)) => true,
            TrainError::Generator(GeneratorError::Tracker(TrackerError::Divergence(_))) => true,
            TrainError::Numerics(
                NumericsError::NonFiniteGradient(_) | NumericsError::NonFiniteParameter(_),
            ) => true,
            _ => false,
        }
    }
}
