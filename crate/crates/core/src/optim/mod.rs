//! Parameter updates, the epoch loop and checkpoint files.

mod checkpoint;
mod sgd;
mod train;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_subset, name_matches, save_checkpoint, EpochRecord, ModelCheckpoint,
    TrainingMetadata,
};
pub use sgd::{clip_global_norm, sgd_momentum_step, OptimConfig, OptimizerState};
pub use train::{train_loop, Objective, Selection};
