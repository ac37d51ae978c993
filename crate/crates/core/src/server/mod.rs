//! Server-side foundation model: a dilated causal encoder trained with a
//! hierarchical contrastive objective on the union of all client features.

mod contrastive;
mod crop;
mod encoder;
mod pretrain;
mod repr;
#[cfg(test)]
mod tests;

use thiserror::Error;

use crate::nn::NnError;

pub use contrastive::{contrastive_node, hierarchical_contrastive_loss, hierarchical_contrastive_loss_grad};
pub use crop::{random_crop_pair, CropPair};
pub use encoder::{Encoder, EncoderConfig, EncoderHead};
pub use pretrain::{pretrain, read_encoder, write_encoder, PretrainReport};
pub use repr::ReprMatrix;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error("contrastive loss undefined for batch {batch} with overlap {overlap}")]
    UndefinedLoss { batch: usize, overlap: usize },
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("training diverged at iteration {iteration} (lr {lr:e}, grad norm {grad_norm:e}): {reason}")]
    Training {
        iteration: usize,
        lr: f64,
        grad_norm: f64,
        reason: String,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
}
