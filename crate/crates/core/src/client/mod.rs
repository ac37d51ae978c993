//! Edge-client forecaster: a causal TCN over local features, an optional
//! branch over the server's representation vector, and a linear head over
//! both.

mod model;
mod train;
#[cfg(test)]
mod tests;

use thiserror::Error;

use crate::data::DataError;
use crate::nn::NnError;

pub use model::{read_client, write_client, ClientConfig, ClientModel, ClientVariant};
pub use train::{
    evaluate, local_train, mse_loss, ClientInputs, EpochRecord, EvalReport, StopDecision, TrainOutcome,
    TrainState,
};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid client configuration: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("client {client} diverged at epoch {epoch}, batch {batch} (lr {lr:e}): {reason}")]
    Training {
        client: String,
        epoch: usize,
        batch: usize,
        lr: f64,
        reason: String,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
}
