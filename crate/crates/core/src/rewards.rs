//! Bag-level and instance-level rewards for policy learning.

use serde::Serialize;

pub const DEFAULT_INSTANCE_CONSTANT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("no bag performances given")]
    NoBags,
    #[error("bag {bag}: {got} instance rewards for {expected} bag entries")]
    SizeMismatch {
        bag: usize,
        expected: usize,
        got: usize,
    },
}

/// Min-max scales bag performances to [−1, 1]. All bags get 0 when every
/// performance is equal.
pub fn bag_rewards(performances: &[f64]) -> Result<Vec<f64>, RewardError> {
    if performances.is_empty() {
        return Err(RewardError::NoBags);
    }
    let min = performances.iter().copied().fold(f64::INFINITY, f64::min);
    let max = performances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0.0; performances.len()]);
    }
    Ok(performances
        .iter()
        .map(|u| 2.0 * (u - min) / (max - min) - 1.0)
        .collect())
}

/// Instance reward: `±c` for large-loss instances, `±c/2` otherwise, with the
/// sign of the bag reward (zero counts as positive).
pub fn instance_reward(bag_reward: f64, is_li: bool, c: f64) -> f64 {
    let magnitude = if is_li { c } else { c / 2.0 };
    if bag_reward >= 0.0 {
        magnitude
    } else {
        -magnitude
    }
}

/// Rewards of one policy-learning iteration over `M` sampled bags.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RewardRecord {
    pub performances: Vec<f64>,
    pub bag_rewards: Vec<f64>,
    /// `[bag][instance]`
    pub li_flags: Vec<Vec<bool>>,
    pub instance_rewards: Vec<Vec<f64>>,
    pub c: f64,
}

impl RewardRecord {
    /// Scores every bag and instance from bag performances and LI flags.
    ///
    /// When every bag performs the same the iteration carries no comparison,
    /// so instance rewards are 0 as well; otherwise a bag reward of exactly 0
    /// takes the positive branch of [`instance_reward`].
    pub fn new(performances: Vec<f64>, li_flags: Vec<Vec<bool>>, c: f64) -> Result<Self, RewardError> {
        let bag_rewards = bag_rewards(&performances)?;
        if li_flags.len() != performances.len() {
            return Err(RewardError::SizeMismatch {
                bag: 0,
                expected: performances.len(),
                got: li_flags.len(),
            });
        }
        let degenerate = performances.iter().all(|u| *u == performances[0]);
        let instance_rewards = li_flags
            .iter()
            .zip(&bag_rewards)
            .map(|(flags, rb)| {
                flags
                    .iter()
                    .map(|li| if degenerate { 0.0 } else { instance_reward(*rb, *li, c) })
                    .collect()
            })
            .collect();
        Ok(Self {
            performances,
            bag_rewards,
            li_flags,
            instance_rewards,
            c,
        })
    }

    pub fn num_bags(&self) -> usize {
        self.bag_rewards.len()
    }

    /// `R_bag + R_instance` per `[bag][instance]`.
    pub fn totals(&self) -> Result<Vec<Vec<f64>>, RewardError> {
        total_rewards(&self.bag_rewards, &self.instance_rewards)
    }

    pub fn mean_instance_reward(&self, bag: usize) -> f64 {
        let r = &self.instance_rewards[bag];
        if r.is_empty() {
            0.0
        } else {
            r.iter().sum::<f64>() / r.len() as f64
        }
    }
}

pub fn total_rewards(
    bag_rewards: &[f64],
    instance_rewards: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, RewardError> {
    if bag_rewards.len() != instance_rewards.len() {
        return Err(RewardError::SizeMismatch {
            bag: 0,
            expected: bag_rewards.len(),
            got: instance_rewards.len(),
        });
    }
    Ok(bag_rewards
        .iter()
        .zip(instance_rewards)
        .map(|(rb, ri)| ri.iter().map(|r| rb + r).collect())
        .collect())
}
