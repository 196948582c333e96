//! Training orchestration: configuration, the training loop, checkpoints and
//! the command-line surface.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod learner;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest};
pub use config::{Preset, TrainConfig, Variant};
pub use learner::Learner;
pub use train::{resume_run, train_run, TrainSummary, Trainer};
