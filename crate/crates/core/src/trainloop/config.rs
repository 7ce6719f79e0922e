use serde::{Deserialize, Serialize};

use crate::generator::DEFAULT_POLICY_HIDDEN;
use crate::rewards::DEFAULT_INSTANCE_CONSTANT;
use crate::tracker::TrackerConfig;

use super::TrainError;

/// Every knob of a reinforced-augmentation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Alternate epochs (generator learning, then tracker re-training).
    pub alternate_epochs: usize,
    /// Policy updates per alternate epoch.
    pub generator_epochs: usize,
    /// Bags resampled from each sampled bag.
    pub bag_resamples: usize,
    pub bag_size: usize,
    pub instance_constant: f64,
    /// Augmented instances drawn per training turn, before filtering.
    pub augmentation_multiplier: usize,
    /// Fraction of the augmented data mixed into each re-training run.
    pub augmented_ratio: f64,
    /// Fraction of validation dialogues used to score bags.
    pub validation_ratio: f64,
    pub pretrain_epochs: usize,
    pub retrain_epochs: usize,
    pub fine_tune_passes: usize,
    /// Gradient-descent learning rate for bag fine-tuning.
    pub fine_tune_learning_rate: f64,
    pub policy_hidden: usize,
    pub policy_learning_rate: f64,
    /// Replace the learned policy by uniform candidate choice.
    pub da_only: bool,
    pub tracker: TrackerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            alternate_epochs: 5,
            generator_epochs: 200,
            bag_resamples: 2,
            bag_size: 25,
            instance_constant: DEFAULT_INSTANCE_CONSTANT,
            augmentation_multiplier: 5,
            augmented_ratio: 0.4,
            validation_ratio: 0.3,
            pretrain_epochs: 30,
            retrain_epochs: 5,
            fine_tune_passes: 1,
            fine_tune_learning_rate: 0.02,
            policy_hidden: DEFAULT_POLICY_HIDDEN,
            policy_learning_rate: 1e-3,
            da_only: false,
            tracker: TrackerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.bag_resamples == 0 || self.bag_size == 0 || self.policy_hidden == 0 {
            return bad("bag_resamples, bag_size and policy_hidden must be positive");
        }
        if !(self.instance_constant > 0.0) {
            return bad("instance_constant must be positive");
        }
        for (name, r) in [
            ("augmented_ratio", self.augmented_ratio),
            ("validation_ratio", self.validation_ratio),
        ] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(TrainError::Config(format!("{name} {r} outside (0, 1]")));
            }
        }
        if !(self.policy_learning_rate > 0.0) {
            return bad("policy_learning_rate must be positive");
        }
        if !(self.fine_tune_learning_rate > 0.0) {
            return bad("fine_tune_learning_rate must be positive");
        }
        self.tracker
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))
    }
}
