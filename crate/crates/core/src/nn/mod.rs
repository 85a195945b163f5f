//! Small convolutional network engine: forward passes with recorded
//! activations, exact reverse-mode gradients, RMSProp training and model
//! files.

mod engine;
mod io;
mod layer;
mod model;
mod train;

pub use engine::{backward, forward, logits, predict, ForwardTrace, Gradients};
pub use io::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use layer::{Conv2d, Dense, Layer, LayerKind};
pub use model::ModelSpec;
pub use train::{
    evaluate_accuracy, evaluate_loss, train, train_with_progress, EpochRecord, Labeled,
    TrainingConfig, TrainingHistory,
};

pub(crate) use layer::{global_avg_pool_spread, maxpool_route};
