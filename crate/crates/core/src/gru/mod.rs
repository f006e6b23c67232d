//! GRU sequence-to-sequence autoencoder over instruction-token ids.
//!
//! The encoder (token embedding followed by two stacked GRU layers) maps a
//! function's id sequence to the top layer's final hidden state. The decoder
//! GRU is initialized from that state and trained with teacher forcing to
//! reproduce the sequence; only the encoder is used after training.

mod cell;
mod model;
mod train;

pub use cell::{gru_step, GruCellParams};
pub use model::{
    decode_teacher_forced, encode, encode_many, loss_and_gradients, mean_loss, reconstruct,
    teacher_forced_accuracy, FunctionEmbedding, GruAutoencoderModel, ModelDims,
};
pub use train::{train, train_with_observer, EpochStats, TrainOutcome, TrainingConfig};

use crate::container::ContainerError;

#[derive(Debug, thiserror::Error)]
pub enum GruError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("sequence needs at least the <start> and <end> tokens")]
    EmptySequence,
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}
