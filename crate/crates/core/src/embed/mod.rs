//! Contrastive embedding learning: the dense head, the loss and its
//! gradient, SGD, and the training loop over augmented view pairs.

mod head;
mod loss;
mod matrix;
mod optim;
mod train;

pub use head::{backprop_head, head_forward, Activation, DenseLayer, EmbeddingHead, HeadGrads};
pub use loss::{
    contrastive_grad, contrastive_loss, contrastive_loss_and_grad, ContrastiveBatch, LossValue, Temperature,
};
pub use matrix::Matrix;
pub use optim::{sgd_step, OptimizerState};
pub use train::{train, LossRecord, TrainConfig, TrainOutcome};
