use rand::Rng;

use crate::corpus::{apply_replacement, AugmentationSite, Corpus, Dialogue, SpanGroups, Turn};
use crate::generator::{Instance, PolicyNet, StateCache};
use crate::numerics::{AdamState, Gradients, NumericsError, StreamRng};
use crate::scalar::Scalar;
use crate::tracker::{joint_goal_accuracy, TrackerModel};

use super::TrainError;

/// Site indices drawn span-first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bag {
    pub sites: Vec<usize>,
}

/// One policy resample of a [`Bag`].
#[derive(Clone, Debug, PartialEq)]
pub struct SampledBag {
    pub sites: Vec<usize>,
    /// Chosen candidate index per instance.
    pub chosen: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub turns: Vec<Turn>,
}

/// Draws a site: a span text uniformly, then a site carrying it uniformly.
pub fn sample_site<R: Rng + ?Sized>(groups: &SpanGroups, rng: &mut R) -> usize {
    let (_, members) = groups.group(rng.gen_range(0..groups.len()));
    members[rng.gen_range(0..members.len())]
}

pub fn sample_bag<R: Rng + ?Sized>(
    groups: &SpanGroups,
    size: usize,
    rng: &mut R,
) -> Result<Bag, TrainError> {
    if groups.is_empty() {
        return Err(TrainError::NoSites);
    }
    Ok(Bag {
        sites: (0..size).map(|_| sample_site(groups, rng)).collect(),
    })
}

/// The turn produced by putting candidate `chosen` into `site`.
pub fn materialize(
    corpus: &Corpus,
    site: &AugmentationSite,
    chosen: usize,
) -> Result<Turn, TrainError> {
    let (turn, _) = apply_replacement(site.turn(corpus), site, &site.candidates[chosen])?;
    Ok(turn)
}

/// Resamples `bag` `m` times from the policy.
pub fn sample_bags<T: Scalar, R: Rng + ?Sized>(
    policy: &PolicyNet<T>,
    bag: &Bag,
    m: usize,
    cache: &mut StateCache<'_, T>,
    rng: &mut R,
) -> Result<Vec<SampledBag>, TrainError> {
    let mut dists = Vec::with_capacity(bag.sites.len());
    for &s in &bag.sites {
        dists.push(policy.distribution(cache.get(s)?)?);
    }
    let (corpus, sites) = (cache.corpus(), cache.sites());
    (0..m)
        .map(|_| {
            let mut out = SampledBag {
                sites: bag.sites.clone(),
                chosen: Vec::with_capacity(bag.sites.len()),
                log_probs: Vec::with_capacity(bag.sites.len()),
                turns: Vec::with_capacity(bag.sites.len()),
            };
            for (&s, dist) in bag.sites.iter().zip(&dists) {
                let (k, lp) = crate::generator::sample_from(dist, rng);
                out.turns.push(materialize(corpus, &sites[s], k)?);
                out.chosen.push(k);
                out.log_probs.push(lp);
            }
            Ok(out)
        })
        .collect()
}

/// Joint goal accuracy on `validation` of a copy of `theta_r` fine-tuned on
/// the bag's turns; `theta_r` itself is untouched.
pub fn evaluate_bag<T: Scalar>(
    theta_r: &TrackerModel<T>,
    bag: &SampledBag,
    validation: &[Dialogue],
    passes: usize,
    learning_rate: f64,
    rng: &mut StreamRng,
) -> Result<f64, TrainError> {
    let turns: Vec<&Turn> = bag.turns.iter().collect();
    let tuned = theta_r.fine_tune(&turns, passes, learning_rate, rng)?;
    Ok(joint_goal_accuracy(
        &tuned,
        validation,
        theta_r.config().threshold,
    )?)
}

/// One ADAM step ascending `(1/M) Σ_j Σ_i R_ij log π(s_ij, p′_ij)`.
/// Returns the surrogate loss (the negated objective).
pub fn policy_gradient_step<T: Scalar>(
    policy: &mut PolicyNet<T>,
    adam: &mut AdamState<T>,
    bags: &[SampledBag],
    totals: &[Vec<f64>],
    cache: &mut StateCache<'_, T>,
) -> Result<f64, TrainError> {
    if totals.len() != bags.len() {
        return Err(TrainError::Config(format!(
            "{} reward rows for {} bags",
            totals.len(),
            bags.len()
        )));
    }
    for bag in bags {
        for &s in &bag.sites {
            cache.ensure(s)?;
        }
    }
    let mut instances = Vec::new();
    for (bag, rewards) in bags.iter().zip(totals) {
        if rewards.len() != bag.sites.len() {
            return Err(TrainError::Config(format!(
                "{} rewards for a bag of {}",
                rewards.len(),
                bag.sites.len()
            )));
        }
        for ((&s, &chosen), &reward) in bag.sites.iter().zip(&bag.chosen).zip(rewards) {
            instances.push(Instance {
                states: cache.loaded(s).expect("ensured above"),
                chosen,
                reward,
            });
        }
    }
    let mut grads = Gradients::zeros_like(policy.params());
    let loss = policy.reinforce_loss_and_grads(&instances, bags.len(), &mut grads)?;
    adam.step(policy.params_mut(), &mut grads).map_err(|e| match e {
        NumericsError::NonFiniteGradient(p) | NumericsError::NonFiniteParameter(p) => {
            TrainError::Divergence(format!("policy parameter {p}"))
        }
        other => other.into(),
    })?;
    Ok(loss)
}
