use std::collections::HashMap;

use serde::Serialize;

use crate::corpus::{Dialogue, SpanGroups};
use crate::generator::{PolicyNet, StateCache};
use crate::numerics::{AdamState, SeedTree};
use crate::rewards::RewardRecord;
use crate::scalar::Scalar;
use crate::tracker::TrackerModel;

use super::bags::{evaluate_bag, materialize, policy_gradient_step, sample_bag, sample_bags};
use super::{TrainConfig, TrainError};

/// One line of the reward trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RewardTrace {
    pub epoch: usize,
    pub n: usize,
    pub j: usize,
    #[serde(rename = "U")]
    pub u: f64,
    #[serde(rename = "R_bag")]
    pub r_bag: f64,
    #[serde(rename = "mean_R_instance")]
    pub mean_r_instance: f64,
}

/// Everything generator learning reads while the tracker is frozen.
pub struct GeneratorContext<'a, T> {
    pub theta_r: &'a TrackerModel<T>,
    pub cache: StateCache<'a, T>,
    pub groups: SpanGroups,
    /// Validation dialogues that score bags.
    pub validation: Vec<Dialogue>,
    large_loss: HashMap<(usize, usize), bool>,
}

impl<'a, T: Scalar> GeneratorContext<'a, T> {
    pub fn new(
        theta_r: &'a TrackerModel<T>,
        cache: StateCache<'a, T>,
        validation: Vec<Dialogue>,
    ) -> Result<Self, TrainError> {
        if validation.iter().all(|d| d.turns.is_empty()) {
            return Err(TrainError::EmptyValidation);
        }
        let groups = SpanGroups::new(cache.sites());
        if groups.is_empty() {
            return Err(TrainError::NoSites);
        }
        Ok(Self {
            theta_r,
            cache,
            groups,
            validation,
            large_loss: HashMap::new(),
        })
    }

    /// Whether the frozen tracker mispredicts the turn made by putting
    /// candidate `chosen` into `site`.
    pub fn is_large_loss(&mut self, site: usize, chosen: usize) -> Result<bool, TrainError> {
        if let Some(v) = self.large_loss.get(&(site, chosen)) {
            return Ok(*v);
        }
        let turn = materialize(self.cache.corpus(), &self.cache.sites()[site], chosen)?;
        let v = self.theta_r.is_large_loss(&turn);
        self.large_loss.insert((site, chosen), v);
        Ok(v)
    }
}

/// Trains `policy` for `config.generator_epochs` iterations of bag sampling,
/// bag scoring and policy-gradient updates.
pub fn generator_learning_epoch<T: Scalar>(
    ctx: &mut GeneratorContext<'_, T>,
    mut policy: PolicyNet<T>,
    config: &TrainConfig,
    epoch: usize,
    tree: &SeedTree,
) -> Result<(PolicyNet<T>, Vec<RewardTrace>), TrainError> {
    let mut adam = AdamState::new(policy.params(), config.policy_learning_rate);
    let mut rng = tree.stream("bags");
    let mut trace = Vec::with_capacity(config.generator_epochs * config.bag_resamples);
    for n in 1..=config.generator_epochs {
        let mut step = |ctx: &mut GeneratorContext<'_, T>,
                    policy: &mut PolicyNet<T>,
                    trace: &mut Vec<RewardTrace>|
         -> Result<(), TrainError> {
            let bag = sample_bag(&ctx.groups, config.bag_size, &mut rng)?;
            let bags = sample_bags(policy, &bag, config.bag_resamples, &mut ctx.cache, &mut rng)?;
            let mut performances = Vec::with_capacity(bags.len());
            // Every resample of this bag is fine-tuned under the same random
            // stream (shuffles and dropout masks), so their scores differ by
            // content rather than by noise.
            for b in &bags {
                let mut ft = tree.stream(&format!("fine-tune/{n}"));
                performances.push(evaluate_bag(
                    ctx.theta_r,
                    b,
                    &ctx.validation,
                    config.fine_tune_passes,
                    config.fine_tune_learning_rate,
                    &mut ft,
                )?);
            }
            let mut flags = Vec::with_capacity(bags.len());
            for b in &bags {
                let f = b
                    .sites
                    .iter()
                    .zip(&b.chosen)
                    .map(|(&s, &k)| ctx.is_large_loss(s, k))
                    .collect::<Result<Vec<_>, _>>()?;
                flags.push(f);
            }
            let record = RewardRecord::new(performances, flags, config.instance_constant)?;
            let totals = record.totals()?;
            policy_gradient_step(policy, &mut adam, &bags, &totals, &mut ctx.cache)?;
            for j in 0..record.num_bags() {
                trace.push(RewardTrace {
                    epoch,
                    n,
                    j: j + 1,
                    u: record.performances[j],
                    r_bag: record.bag_rewards[j],
                    mean_r_instance: record.mean_instance_reward(j),
                });
            }
            Ok(())
        };
        step(ctx, &mut policy, &mut trace).map_err(|e| TrainError::Iteration {
            epoch,
            iteration: n,
            source: Box::new(e),
        })?;
    }
    Ok((policy, trace))
}
