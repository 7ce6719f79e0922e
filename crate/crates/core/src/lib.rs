//! Reinforced data augmentation for dialog state tracking.
//!
//! A contextual-bandit generator learns which span replacements produce useful
//! training turns, using rewards measured on a reference tracker, and the
//! tracker is re-trained on the augmented data in alternation.

pub mod cli;
pub mod corpus;
pub mod generator;
pub mod numerics;
pub mod rewards;
pub mod scalar;
pub mod synthetic;
pub mod tracker;
pub mod trainloop;

pub use scalar::Scalar;

/// Double-precision tracker, as used by the command-line tool.
pub type Tracker = tracker::TrackerModel<f64>;
pub type Policy = generator::PolicyNet<f64>;
pub type Tracker32 = tracker::TrackerModel<f32>;
pub type Policy32 = generator::PolicyNet<f32>;
