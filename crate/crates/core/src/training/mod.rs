//! Loss, optimizer, schedule, augmentation, the training loop and
//! checkpoint files.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod optim;
pub mod trainer;

pub use augment::augment;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::{AugmentConfig, RunConfig, TrainConfig};
pub use optim::{cosine_lr, Adam};
pub use trainer::{train, EpochRecord, TrainOutcome};
