//! Optimisation, fine-tuning and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod examples;
mod gradcheck;
mod train;

pub use adam::{adam_step, clip_grad_norm, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Stage, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use examples::{caption_tokens, prepare_examples, TrainingExample};
pub use gradcheck::{check_loss_gradients, toy_batch, GRAD_CHECK_EPS};
pub use train::{epoch_order, evaluate_loss, finetune, resume, train, transfer_parameters};

#[cfg(test)]
mod tests;
