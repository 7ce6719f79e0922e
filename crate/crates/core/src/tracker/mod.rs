//! Reference dialog state tracker, state updates and joint goal accuracy.

mod model;
mod state;

pub use model::{EpochMetrics, PassCount, TrackerConfig, TrackerModel, Vocab, UNK};
pub use state::{
    joint_goal_accuracy, mispredicts_label, update_state, SlotPrediction, TurnPrediction,
    TurnPredictor,
};

pub use crate::corpus::DialogState;

use crate::corpus::{CandidateStore, Corpus};
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum TrackerError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("span [{start}, {end}) out of bounds for utterance of length {len}")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("invalid tracker config: {0}")]
    Config(String),
    #[error("embeddings file: {0}")]
    Embeddings(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Vocabulary over training utterances, ontology slot and value words, and
/// (when given) every word of the candidate store.
pub fn build_vocab(train: &Corpus, store: Option<&CandidateStore>) -> Vocab {
    let mut words: Vec<&str> = Vec::new();
    for t in train.turns() {
        words.extend(t.user.iter().map(String::as_str));
        words.extend(t.system.iter().map(String::as_str));
    }
    for (slot, value) in train.ontology.pairs() {
        words.extend(slot.split(' '));
        words.extend(value.split(' '));
    }
    if let Some(s) = store {
        words.extend(s.tokens());
    }
    Vocab::build(words)
}

#[cfg(test)]
mod tests;
