use std::collections::HashMap;

use rand::Rng;
use serde::Serialize;

use crate::corpus::{Candidate, Span, SpanGroups, Turn};
use crate::generator::{sample_from, PolicyNet, StateCache};
use crate::scalar::Scalar;

use super::bags::{materialize, sample_site};
use super::TrainError;

/// How replacements are chosen when generating data.
#[derive(Clone, Copy, Debug)]
pub enum Chooser<'p, T> {
    Policy(&'p PolicyNet<T>),
    /// Uniform over the candidate set, with no filtering.
    Uniform,
}

/// A generated turn and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedInstance {
    pub site: usize,
    pub dialogue_id: String,
    pub turn_index: usize,
    pub span: Span,
    pub span_text: String,
    pub candidate: Candidate,
    pub probability: f64,
    pub turn: Turn,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentedSet {
    /// Instances drawn before filtering.
    pub drawn: usize,
    pub instances: Vec<AugmentedInstance>,
}

#[derive(Serialize)]
struct ExportInstance<'a> {
    dialogue_id: &'a str,
    turn_index: usize,
    span: Span,
    span_text: &'a str,
    candidate: &'a Candidate,
    probability: f64,
    system: String,
    user: String,
    turn_label: Vec<(&'a str, &'a str)>,
}

impl AugmentedSet {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn turns(&self) -> impl Iterator<Item = &Turn> {
        self.instances.iter().map(|i| &i.turn)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let instances: Vec<ExportInstance<'_>> = self
            .instances
            .iter()
            .map(|i| ExportInstance {
                dialogue_id: &i.dialogue_id,
                turn_index: i.turn_index,
                span: i.span,
                span_text: &i.span_text,
                candidate: &i.candidate,
                probability: i.probability,
                system: crate::corpus::detokenize(&i.turn.system),
                user: i.turn.user_text(),
                turn_label: i.turn.turn_label.iter().collect(),
            })
            .collect();
        serde_json::json!({ "drawn": self.drawn, "instances": instances })
    }
}

/// Whether a policy draw survives filtering: the minimum-probability
/// candidate of a site is dropped unless every candidate ties.
pub fn keeps(probs: &[f64], chosen: usize) -> bool {
    let min = probs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    probs.len() == 1 || min == max || probs[chosen] > min
}

/// Draws `count` (site, replacement) pairs span-first and keeps the ones
/// that pass the filter.
pub fn generate_augmented_data<T: Scalar, R: Rng + ?Sized>(
    chooser: Chooser<'_, T>,
    cache: &mut StateCache<'_, T>,
    groups: &SpanGroups,
    count: usize,
    rng: &mut R,
) -> Result<AugmentedSet, TrainError> {
    if groups.is_empty() {
        return Err(TrainError::NoSites);
    }
    let mut dists: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut out = AugmentedSet {
        drawn: count,
        instances: Vec::new(),
    };
    for _ in 0..count {
        let s = sample_site(groups, rng);
        let site = &cache.sites()[s];
        let (k, probability, keep) = match chooser {
            Chooser::Uniform => {
                let n = site.candidates.len();
                (rng.gen_range(0..n), 1.0 / n as f64, true)
            }
            Chooser::Policy(policy) => {
                if !dists.contains_key(&s) {
                    let d = policy.distribution(cache.get(s)?)?;
                    dists.insert(s, d);
                }
                let d = &dists[&s];
                let (k, _) = sample_from(d, rng);
                (k, d[k], keeps(d, k))
            }
        };
        if !keep {
            continue;
        }
        let site = &cache.sites()[s];
        out.instances.push(AugmentedInstance {
            site: s,
            dialogue_id: site.dialogue_id.clone(),
            turn_index: site.turn_index,
            span: site.span,
            span_text: site.span_text.clone(),
            candidate: site.candidates[k].clone(),
            probability,
            turn: materialize(cache.corpus(), site, k)?,
        });
    }
    Ok(out)
}
