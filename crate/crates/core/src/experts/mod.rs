//! Textual Alignment: per-class expert training with the sigmoid loss and
//! memory-efficient expert batching.

pub mod loss;
pub mod train;

pub use loss::{cross_entropy_loss, sigmoid_loss, sigmoid_loss_grad};
pub use train::{
    apply_expert_batch, train_task_experts, ExpertEntry, ExpertSet, LossKind, LossRecord,
    TrainConfig, TrainingLog,
};
