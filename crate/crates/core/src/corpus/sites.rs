use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::candidates::{Candidate, CandidateSource, CandidateStore};
use super::dataset::{Corpus, Turn};
use super::tokenize::detokenize;
use super::CorpusError;

/// Half-open token range `[start, end)` in a user utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// One replaceable span occurrence together with its candidate set.
///
/// `candidates[0]` is always the original span text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentationSite {
    pub dialogue_index: usize,
    pub dialogue_id: String,
    pub turn_index: usize,
    pub span: Span,
    pub span_text: String,
    pub candidates: Vec<Candidate>,
}

impl AugmentationSite {
    pub fn turn<'c>(&self, corpus: &'c Corpus) -> &'c Turn {
        &corpus.dialogues[self.dialogue_index].turns[self.turn_index]
    }

    pub fn position(&self, candidate: &Candidate) -> Option<usize> {
        self.candidates.iter().position(|c| c == candidate)
    }
}

/// Enumerates every (turn, span occurrence) whose text keys into `store`.
///
/// Slot-value swaps are offered only when the turn actually labels the span's
/// value, and a site is kept only if some candidate besides the span survives.
/// Output order is dialogue, turn, start, length.
pub fn index_sites(corpus: &Corpus, store: &CandidateStore) -> Vec<AugmentationSite> {
    let max_len = store.max_span_len();
    let mut sites = Vec::new();
    for (di, dialogue) in corpus.dialogues.iter().enumerate() {
        for (ti, turn) in dialogue.turns.iter().enumerate() {
            let n = turn.user.len();
            for start in 0..n {
                for len in 1..=max_len.min(n - start) {
                    let span_text = detokenize(&turn.user[start..start + len]);
                    let Some(cands) = store.get(&span_text) else { continue };
                    let mut candidates = vec![Candidate::original(&span_text)];
                    candidates.extend(
                        cands
                            .iter()
                            .filter(|c| match &c.source {
                                CandidateSource::SlotValue { slot, .. } => {
                                    turn.turn_label.get(slot) == Some(span_text.as_str())
                                }
                                _ => true,
                            })
                            .cloned(),
                    );
                    if candidates.len() < 2 {
                        continue;
                    }
                    sites.push(AugmentationSite {
                        dialogue_index: di,
                        dialogue_id: dialogue.id.clone(),
                        turn_index: ti,
                        span: Span::new(start, start + len),
                        span_text,
                        candidates,
                    });
                }
            }
        }
    }
    sites
}

/// Sites grouped by span text, for span-first sampling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanGroups {
    groups: Vec<(String, Vec<usize>)>,
}

impl SpanGroups {
    pub fn new(sites: &[AugmentationSite]) -> Self {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in sites.iter().enumerate() {
            map.entry(s.span_text.as_str()).or_default().push(i);
        }
        Self {
            groups: map
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group(&self, i: usize) -> (&str, &[usize]) {
        let (k, v) = &self.groups[i];
        (k, v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.groups.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

/// Substitutes `candidate` for the site's span in `turn`.
///
/// Returns the new turn and the span the candidate now occupies. Slot-value
/// candidates also rewrite the turn label and the turn's gold state.
pub fn apply_replacement(
    turn: &Turn,
    site: &AugmentationSite,
    candidate: &Candidate,
) -> Result<(Turn, Span), CorpusError> {
    if site.position(candidate).is_none() {
        return Err(CorpusError::CandidateNotInSite {
            candidate: candidate.text.clone(),
            span: site.span_text.clone(),
        });
    }
    let Span { start, end } = site.span;
    if end > turn.user.len() || start >= end || detokenize(&turn.user[start..end]) != site.span_text
    {
        return Err(CorpusError::SiteMismatch {
            dialogue: site.dialogue_id.clone(),
            turn: site.turn_index,
            span: site.span_text.clone(),
        });
    }
    let mut out = turn.clone();
    out.user.splice(start..end, candidate.tokens.iter().cloned());
    let new_span = Span::new(start, start + candidate.tokens.len());
    if let CandidateSource::SlotValue { slot, value } = &candidate.source {
        if turn.turn_label.get(slot) != Some(site.span_text.as_str()) {
            return Err(CorpusError::SiteMismatch {
                dialogue: site.dialogue_id.clone(),
                turn: site.turn_index,
                span: site.span_text.clone(),
            });
        }
        out.turn_label.insert(slot.clone(), value.clone());
        // The label at this turn overrides the slot, so only that slot changes.
        out.gold_state = out.gold_state.with(slot, value);
    }
    Ok((out, new_span))
}
