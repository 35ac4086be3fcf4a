//! Loss, optimizer, schedule, augmentation, folds and the training loop.

mod augment;
mod folds;
mod loss;
mod optim;
mod trainer;

pub use augment::{augment, AugmentDraw};
pub use folds::{make_folds, FoldSplit};
pub use loss::{dice_ce_loss, dice_ce_loss_raw, LossParts, DICE_SMOOTH};
pub use optim::{nesterov_update, poly_lr, Sgd};
pub use trainer::{curve_csv, derive_seed, train_fold, validation_ji, CurveRow, TrainHyper, TrainSample};
