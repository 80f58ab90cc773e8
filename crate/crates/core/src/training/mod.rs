//! Losses, moving-sample augmentation and the optimization loop.

mod augment;
mod check;
mod losses;
mod trainer;

pub use check::{lovasz_breakpoint_gap, objective_gradient_check, ObjectiveCheck};
pub use augment::{augment_scan, AugmentConfig, AugmentedSample, ClutterSource};
pub use losses::{
    consistency_hard, consistency_soft, cross_entropy, lovasz_softmax, record, softmax_rows, LossBreakdown, LossValue,
};
pub use trainer::{batch_loss, checkpoint_name, train, EpochRecord, History, TrainConfig, TrainData, Trainer};
