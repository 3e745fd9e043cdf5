//! Segmentation networks with a shared trunk and per-domain heads, their
//! loss, optimiser and on-disk format.

pub mod checkpoint;
pub mod network;
pub mod params;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use network::{compute_loss, forward, logits, loss_and_gradients, Batch, Gradients, LossBreakdown};
pub use params::{build_model, build_model_from_specs, num_classes_for, ArchPreset, ModelParams, Variant};
pub use train::{
    sgd_step, train, train_with_progress, DomainEpochStats, DomainSchedule, EpochStats, Sgd, StepRecord, TrainConfig,
    Trainer,
};
