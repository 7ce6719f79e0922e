//! Dense tensors, reverse-mode gradients, ADAM, SGD and seeded randomness.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod rng;
mod tensor;

pub use adam::{sgd_step, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader, ParamHeader};
pub use gradcheck::{check_gradients, relative_error, GradCheckReport};
pub use graph::{sigmoid, softplus, Gradients, Graph, NodeId};
pub use params::{ParamId, ParamStore};
pub use rng::{SeedTree, StreamRng};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch at node {node}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        node: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("data length {len} does not fit shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{0} needs at least one operand")]
    EmptyOperands(&'static str),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("non-finite value in parameter {0} after update")]
    NonFiniteParameter(String),
    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
