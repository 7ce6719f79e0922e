use std::collections::HashMap;

use crate::corpus::{AugmentationSite, Candidate, Corpus};
use crate::scalar::Scalar;
use crate::tracker::TrackerModel;

use super::policy::{featurize, PolicyNet, PolicyState};
use super::GeneratorError;

/// Policy states of every candidate at `site`, read from a frozen tracker.
pub fn site_states<T: Scalar>(
    tracker: &TrackerModel<T>,
    corpus: &Corpus,
    site: &AugmentationSite,
) -> Result<Vec<PolicyState<T>>, GeneratorError> {
    if site.candidates.is_empty() {
        return Err(GeneratorError::EmptyCandidates);
    }
    let turn = site.turn(corpus);
    let p_ctx = tracker.encode_span(turn, site.span)?;
    let p_emb = tracker.phrase_embedding(&turn.user[site.span.start..site.span.end]);
    site.candidates
        .iter()
        .map(|c| featurize(&p_ctx, &p_emb, &tracker.phrase_embedding(&c.tokens)))
        .collect()
}

/// Candidates at `site` paired with their policy probabilities, in site order.
pub fn candidate_distribution<T: Scalar>(
    policy: &PolicyNet<T>,
    site: &AugmentationSite,
    corpus: &Corpus,
    tracker: &TrackerModel<T>,
) -> Result<Vec<(Candidate, f64)>, GeneratorError> {
    let states = site_states(tracker, corpus, site)?;
    let probs = policy.distribution(&states)?;
    Ok(site.candidates.iter().cloned().zip(probs).collect())
}

/// Lazily computed policy states per site index. The tracker is frozen for
/// the lifetime of the cache, so states never go stale.
pub struct StateCache<'a, T> {
    tracker: &'a TrackerModel<T>,
    corpus: &'a Corpus,
    sites: &'a [AugmentationSite],
    states: HashMap<usize, Vec<PolicyState<T>>>,
}

impl<'a, T: Scalar> StateCache<'a, T> {
    pub fn new(
        tracker: &'a TrackerModel<T>,
        corpus: &'a Corpus,
        sites: &'a [AugmentationSite],
    ) -> Self {
        Self {
            tracker,
            corpus,
            sites,
            states: HashMap::new(),
        }
    }

    pub fn tracker(&self) -> &'a TrackerModel<T> {
        self.tracker
    }

    pub fn corpus(&self) -> &'a Corpus {
        self.corpus
    }

    pub fn sites(&self) -> &'a [AugmentationSite] {
        self.sites
    }

    /// Makes sure states for `site` are present.
    pub fn ensure(&mut self, site: usize) -> Result<(), GeneratorError> {
        if !self.states.contains_key(&site) {
            let s = site_states(self.tracker, self.corpus, &self.sites[site])?;
            self.states.insert(site, s);
        }
        Ok(())
    }

    pub fn get(&mut self, site: usize) -> Result<&[PolicyState<T>], GeneratorError> {
        self.ensure(site)?;
        Ok(&self.states[&site])
    }

    /// States for a site already loaded with [`ensure`](Self::ensure).
    pub fn loaded(&self, site: usize) -> Option<&[PolicyState<T>]> {
        self.states.get(&site).map(Vec::as_slice)
    }
}
