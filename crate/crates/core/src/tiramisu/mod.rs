//! Stacked FC-DenseNet 1D denoising autoencoder.
//!
//! Down path: first conv → (dense block ⊕ input → transition down) × n →
//! bottleneck dense block. Up path: (transition up ⊕ skip → dense block) × n →
//! output conv → tanh. Each dense layer is BN → ReLU → conv k → dropout; a
//! transition down is the same unit with a 1-wide conv followed by max pool 2;
//! a transition up is a stride-2 transposed conv cropped to the skip length.

mod checkpoint;
mod config;
mod infer;
mod model;
pub mod ops;
mod train;

pub use checkpoint::{fnv1a64, Checkpoint, NamedTensor, TrainingMeta, MAGIC, VERSION};
pub use config::{ModelConfig, TrainingConfig};
pub use infer::{denoise_signal, make_training_pairs};
pub use model::{Init, Mode, ModelAudit, ParamKind, ParamStore, TiramisuModel, Trace};
pub use ops::{Scalar, Tensor};
pub use train::{
    evaluate_loss, gradient_check, loss_and_grads, GradCheck, loss_csv, mse_loss, total_loss, train, Adam, EpochLog, TrainOptions,
    TrainOutcome, TrainingPair,
};
