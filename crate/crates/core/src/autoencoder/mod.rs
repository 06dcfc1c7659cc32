//! Sparse LSTM autoencoder trained on clean image sequences.
//!
//! The encoder stack maps each `P × D` feature sequence to a code sequence
//! `h`; the decoder stack reads `h` and, through an affine output map,
//! reconstructs the input in reverse time order. Training minimizes
//! `(1/B)·Σ (‖i − î‖² + α‖h‖₁)` with Adam.

mod adam;
mod checkpoint;
mod lstm;
mod model;
mod train;

pub use adam::OptimizerState;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, ConfigEcho,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use lstm::{lstm_backward, lstm_forward, LstmCache, LstmLayerParams};
pub use model::{AutoencoderModel, Batch, ForwardPass, LossBreakdown, ModelConfig, Params};
pub use train::{evaluate_split, train, EpochRecord, TrainConfig, TrainReport};
