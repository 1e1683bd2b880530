//! GRU encoder-decoder with MLP attention, the attention-guidance loss,
//! training with validation-based model selection, and checkpoints.

mod checkpoint;
mod model;
mod train;


pub use checkpoint::{load_checkpoint, read_manifest, save_checkpoint, CheckpointManifest, TensorEntry};
pub use model::{
    ag_loss, attention_targets, gru_step, is_bias, AttentionPlacement, AttentionScorer, Axis, Incidence, Layer, DecoderStepVars, Decoding, ForwardPass, GruCell, GruOut, GruStep, LossVars, Mode,
    ModelConfig, ModelSlots, Seq2SeqModel,
};
pub use train::{
    batch_gradients, carve_validation, correct_flags, evaluate, evaluate_refs, mean_loss, train, train_on,
    EpochRecord, TrainOutcome, TrainingConfig, MAX_EPOCHS,
};


use thiserror::Error;

use crate::numcore::NumError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("unknown token index {0}")]
    UnknownToken(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, batch {batch} (loss {loss})")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Num(#[from] NumError),
}
