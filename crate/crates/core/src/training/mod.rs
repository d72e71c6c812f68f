//! Objectives, optimizer, training loop and checkpoints.

mod adam;
mod checkpoint;
mod gradcheck;
mod loss;
mod trainer;

pub use adam::Adam;
pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, load_checkpoint_as, save_checkpoint, FORMAT_VERSION,
    MAGIC,
};
pub use gradcheck::{check_config, full_model_grad_check, CHECK_MAX_LEN, CHECK_WIDTH};
pub use loss::{
    handoff_loss, handoff_loss_node, joint_loss, satisfaction_loss, satisfaction_loss_node, LOG_EPS,
};
pub use trainer::{
    batch_objective, example_gradients, history_jsonl, prepare_model, selection_metric, train, train_model,
    EpochRecord, Example, ExampleGrad, StopReason, TrainOutcome,
};
