//! Numerics core: layer kernels, loss, optimizer, model and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod ops;
pub mod optim;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use loss::softmax_cross_entropy;
pub use model::{argmax_rows, ArchitectureConfig, ConvBlockSpec, DenseSpec, Mode, Model};
pub use optim::{Grads, Param, ParamSet};
