//! Contextual-bandit policy over span replacement candidates.

mod policy;
mod states;

pub use policy::{
    featurize, sample_from, Instance, PolicyNet, PolicyState, DEFAULT_POLICY_HIDDEN,
};
pub use states::{candidate_distribution, site_states, StateCache};

use rand::Rng;

use crate::numerics::NumericsError;
use crate::scalar::Scalar;
use crate::tracker::TrackerError;

#[derive(Debug, thiserror::Error)]
pub enum GeneratorError {
    #[error("site has no candidates")]
    EmptyCandidates,
    #[error("{what} has dimension {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("chosen candidate {chosen} out of range for {candidates} candidates")]
    ChosenOutOfRange { chosen: usize, candidates: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// A fresh policy sized for a tracker's encoder and embedding widths.
pub fn reinitialize_policy<T: Scalar, R: Rng + ?Sized>(
    encoder_dim: usize,
    embedding_dim: usize,
    hidden: usize,
    rng: &mut R,
) -> PolicyNet<T> {
    PolicyNet::new(encoder_dim + 3 * embedding_dim, hidden, rng)
}
