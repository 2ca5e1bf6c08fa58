//! The quality predictor, its configuration and checkpoint files.

mod checkpoint;
mod config;
mod predictor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{EncoderKind, PredictorConfig};
pub use predictor::{fuse_inputs, BatchInput, ForwardOutputs, Prediction, Predictor, FUSION_W1, FUSION_W2};
