//! The training engine: composite ratios, the clipped joint objective with
//! best-trajectory recommendation gating, the contrastive baseline, and the
//! optimizer loop.

pub mod config;
pub mod objective;
pub mod optim;
pub mod train;

pub use config::{Ablation, TrainConfig};
pub use objective::{
    clipped_term, clipped_term_slope, contrastive_loss, contrastive_loss_grad, in_batch_log_prob,
    rec_log_prob, recpo_objective, recpo_objective_grad, token_ratios, BatchItems, BatchTree,
    GradPaths, ObjectiveConfig, ObjectiveValue, TrajectoryLogProbs, UserGroup,
};
pub use optim::AdamW;
pub use train::{train, NullObserver, StepOutcome, StepRecord, Trainer, TrainObserver, ValRecord};
