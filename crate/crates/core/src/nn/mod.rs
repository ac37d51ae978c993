//! Dense double-precision tensors, reverse-mode gradients, and optimizers.

mod checkpoint;
pub(crate) mod gemm;
mod graph;
mod optim;
mod params;
mod tensor;
pub mod testing;

#[cfg(test)]
mod tests;

pub use checkpoint::{read_checkpoint, write_checkpoint, FORMAT_VERSION};
pub use graph::{activate, mse, Activation, Graph, Var};
pub use optim::{Adam, CosineSchedule};
pub use params::{ParamId, ParameterSet};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Receptive field of a stack of causal convolutions given `(kernel, dilation)` pairs.
pub fn receptive_field(layers: impl IntoIterator<Item = (usize, usize)>) -> usize {
    1 + layers
        .into_iter()
        .map(|(k, d)| (k.saturating_sub(1)) * d)
        .sum::<usize>()
}
