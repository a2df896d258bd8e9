//! Training: Dice loss, Adam, paired augmentation, the loop and checkpoints.

pub mod adam;
pub mod augment;
pub mod checkpoint;
pub mod loss;
pub mod trainer;

pub use adam::Adam;
pub use augment::{augment, hflip, rotate, vflip, AugmentConfig, Transform};
pub use checkpoint::{checkpoint_bytes, decode, load_checkpoint, restore, save_checkpoint, RawTensor};
pub use loss::{dice_loss, DiceLossConfig};
pub use trainer::{train_loop, EpochLog, TrainConfig, TrainSummary, Trainer, LOG_HEADER};
