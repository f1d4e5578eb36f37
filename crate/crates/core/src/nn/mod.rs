//! Linear algebra and the multi-head MLP.

pub mod batch;
pub mod checkpoint;
pub mod matrix;
pub mod mlp;

pub use batch::{batch_gradients, batch_logits, hidden1_batch, sgd_batch_step, BatchPass};
pub use checkpoint::{Checkpoint, HeadRecord};
pub use matrix::Matrix;
pub use mlp::{
    backward, forward, hidden2_gradient, init_mlp, loss_ce, output_error, predict, sgd_step, Architecture,
    Class, DropoutMasks, ForwardTrace, Gradients, MlpModel, Mode,
};
