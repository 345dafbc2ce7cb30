//! MLE pretraining, adversarial generator updates (whole-response and
//! per-prefix rewards), discriminator updates, and the alternating schedule.

mod baseline;
mod config;
pub mod discriminator;
mod freeze;
pub mod generator;
mod optimizer;
mod schedule;

pub use baseline::{baseline_update, BaselineState, BASELINE_INIT};
pub use config::{DiscLoss, Mode, TrainConfig, LEARNING_RATE_GRID};
pub use discriminator::{
    disc_full_gradient, disc_partial_gradient, disc_update_full, disc_update_partial, sample_prefix_len,
    DiscStepStats,
};
pub use freeze::FreezeSpec;
pub use generator::{
    mle_batch_gradient, mle_gradient, mle_pretrain_step, pg_generator_step, policy_gradient,
    regs_generator_step, teacher_forcing_gradient, teacher_forcing_update, RewardSignal,
};
pub use optimizer::Optimizer;
pub use schedule::{
    adversarial_train, pretrain, teacher_forced_accuracy, AdversarialTrainer, EpochStats, HistoryRow,
};
